#include "shiftkit/toy_trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "shiftkit/error.hpp"

namespace shiftkit {

namespace {

using ColMatrix = Eigen::MatrixXd;
using ConstWeights = Eigen::Map<const RowMatrix>;

std::string normalize_answer(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string answer_text(int cls) { return "a" + std::to_string(cls); }

std::mt19937_64 split_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

struct SplitSpec {
  std::size_t n = 0;
  double style = 0.0;
  const ShiftSpec* shift = nullptr;
  bool annotate = false;
};

Dataset make_split(const SyntheticTask& t, const SplitSpec& spec, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> any_class(0, static_cast<int>(t.n_classes) - 1);

  Dataset d;
  d.v.resize(static_cast<Eigen::Index>(spec.n), static_cast<Eigen::Index>(t.d_v));
  d.q.resize(static_cast<Eigen::Index>(spec.n), static_cast<Eigen::Index>(t.d_q));
  d.labels.resize(spec.n);
  if (spec.annotate) d.human.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < d.v.cols(); ++j) d.v(r, j) = normal(rng);
    for (Eigen::Index j = 0; j < d.q.cols(); ++j) d.q(r, j) = normal(rng);
    const Eigen::VectorXd score = t.teacher_v * d.v.row(r).transpose() + t.teacher_q * d.q.row(r).transpose();
    Eigen::Index y = 0;
    score.maxCoeff(&y);
    d.labels[i] = static_cast<int>(y);
    if (spec.style != 0.0) d.q(r, static_cast<Eigen::Index>(t.q_content_dims) + y) += spec.style;
    if (spec.shift) {
      d.v.row(r) += spec.shift->v_shift.transpose();
      d.q.row(r) += spec.shift->q_shift.transpose();
    }
    if (spec.annotate) {
      for (auto& a : d.human[i]) a = unit(rng) < t.annotator_agreement ? d.labels[i] : any_class(rng);
    }
  }
  return d;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

ColMatrix gather(const RowMatrix& m, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return m;
  ColMatrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

struct Forward {
  ColMatrix v, q, av, aq, a, z, logits;
};

Forward forward(const ToyModel& m, const Dataset& data, const std::vector<std::size_t>& idx) {
  const auto h = static_cast<Eigen::Index>(m.hidden);
  const auto c = static_cast<Eigen::Index>(m.n_classes);
  ConstWeights wv(m.layers[0].theta.data(), h, static_cast<Eigen::Index>(m.d_v));
  ConstWeights wq(m.layers[1].theta.data(), h, static_cast<Eigen::Index>(m.d_q));
  ConstWeights wf(m.layers[2].theta.data(), h, 2 * h);
  ConstWeights wh(m.layers[3].theta.data(), c, h);
  Eigen::Map<const Eigen::RowVectorXd> bias(m.layers[3].theta.data() + c * h, c);

  Forward f;
  f.v = gather(data.v, idx);
  f.q = gather(data.q, idx);
  f.av = (f.v * wv.transpose()).array().tanh();
  f.aq = (f.q * wq.transpose()).array().tanh();
  f.a.resize(f.v.rows(), 2 * h);
  f.a << f.av, f.aq;
  f.z = (f.a * wf.transpose()).array().tanh();
  f.logits = f.z * wh.transpose();
  f.logits.rowwise() += bias;
  return f;
}

void check_batch(const Dataset& data, const std::vector<std::size_t>& idx) {
  if (data.size() == 0) throw Error(Errc::EmptyList, "empty dataset");
  for (auto i : idx) {
    if (i >= data.size()) throw Error(Errc::DimensionMismatch, "sample index out of range", i);
  }
}

}  // namespace

double vqa_accuracy(const VqaAnswerSet& ans) {
  if (ans.human_answers.size() != kHumanAnswers) {
    throw Error(Errc::WrongAnswerCount,
                "expected 10 human answers, got " + std::to_string(ans.human_answers.size()));
  }
  const std::string pred = normalize_answer(ans.predicted);
  int matches = 0;
  for (const auto& h : ans.human_answers) matches += normalize_answer(h) == pred ? 1 : 0;
  return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

SyntheticTask SyntheticTask::make(std::uint64_t seed) {
  SyntheticTask t;
  t.seed = seed;
  auto rng = split_engine(seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto c = static_cast<Eigen::Index>(t.n_classes);
  t.teacher_v.resize(c, static_cast<Eigen::Index>(t.d_v));
  t.teacher_q = Eigen::MatrixXd::Zero(c, static_cast<Eigen::Index>(t.d_q));
  for (Eigen::Index i = 0; i < c; ++i) {
    for (Eigen::Index j = 0; j < t.teacher_v.cols(); ++j) t.teacher_v(i, j) = normal(rng);
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(t.q_content_dims); ++j) t.teacher_q(i, j) = normal(rng);
  }

  const auto dv = static_cast<Eigen::Index>(t.d_v);
  const auto dq = static_cast<Eigen::Index>(t.d_q);
  const auto style_dim = static_cast<Eigen::Index>(t.q_content_dims);
  ShiftSpec question{"question_shift", Eigen::VectorXd::Zero(dv), Eigen::VectorXd::Zero(dq)};
  question.q_shift[style_dim] = 4.0;
  ShiftSpec image{"image_shift", Eigen::VectorXd::Zero(dv), Eigen::VectorXd::Zero(dq)};
  image.v_shift[0] = 1.5;
  ShiftSpec joint{"joint_shift", image.v_shift, question.q_shift};
  t.ood_specs = {question, image, joint};
  return t;
}

SyntheticTask SyntheticTask::make_control(std::uint64_t seed) {
  SyntheticTask t = make(seed);
  t.ood_specs = {ShiftSpec{"no_shift", Eigen::VectorXd::Zero(static_cast<Eigen::Index>(t.d_v)),
                           Eigen::VectorXd::Zero(static_cast<Eigen::Index>(t.d_q))}};
  return t;
}

void SyntheticTask::validate() const {
  auto bad = [](const std::string& what) { throw Error(Errc::InvalidConfig, what); };
  if (d_v == 0 || d_q == 0 || hidden == 0 || n_classes < 2) bad("task dimensions must be positive");
  if (q_content_dims > d_q) bad("q_content_dims exceeds d_q");
  if (style_strength != 0.0 && q_content_dims + n_classes > d_q) bad("no room for style coordinates");
  if (teacher_v.rows() != static_cast<Eigen::Index>(n_classes) || teacher_v.cols() != static_cast<Eigen::Index>(d_v) ||
      teacher_q.rows() != static_cast<Eigen::Index>(n_classes) || teacher_q.cols() != static_cast<Eigen::Index>(d_q)) {
    bad("teacher shape does not match task dimensions");
  }
  if (n_pretrain == 0 || n_train == 0 || n_val == 0 || n_test == 0) bad("split sizes must be positive");
  if (!(annotator_agreement >= 0.0 && annotator_agreement <= 1.0)) bad("annotator_agreement must lie in [0, 1]");
  for (const auto& s : ood_specs) {
    if (s.v_shift.size() != static_cast<Eigen::Index>(d_v) || s.q_shift.size() != static_cast<Eigen::Index>(d_q)) {
      bad("shift '" + s.name + "' has the wrong length");
    }
  }
}

TaskData generate(const SyntheticTask& task) {
  task.validate();
  TaskData d;
  auto rng_pre = split_engine(task.seed, 1);
  auto rng_train = split_engine(task.seed, 2);
  auto rng_val = split_engine(task.seed, 3);
  auto rng_test = split_engine(task.seed, 4);
  d.pretrain = make_split(task, {task.n_pretrain, 0.0, nullptr, false}, rng_pre);
  d.train = make_split(task, {task.n_train, task.style_strength, nullptr, false}, rng_train);
  d.val = make_split(task, {task.n_val, task.style_strength, nullptr, false}, rng_val);
  d.id_test = make_split(task, {task.n_test, task.style_strength, nullptr, true}, rng_test);
  for (std::size_t k = 0; k < task.ood_specs.size(); ++k) {
    auto rng = split_engine(task.seed, 5 + k);
    d.ood_test.push_back(make_split(task, {task.n_test, task.style_strength, &task.ood_specs[k], true}, rng));
  }
  return d;
}

ToyModel ToyModel::init(const SyntheticTask& task, std::uint64_t seed) {
  ToyModel m;
  m.d_v = task.d_v;
  m.d_q = task.d_q;
  m.hidden = task.hidden;
  m.n_classes = task.n_classes;
  const std::size_t fan_in[] = {m.d_v, m.d_q, 2 * m.hidden, m.hidden};
  const std::size_t rows[] = {m.hidden, m.hidden, m.hidden, m.n_classes};
  auto rng = split_engine(seed, 100);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l < 4; ++l) {
    const std::size_t weights = rows[l] * fan_in[l];
    const std::size_t n = weights + (l == kHeadLayer ? m.n_classes : 0);
    LayerState s;
    s.name = kLayerNames[l];
    s.theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in[l]));
    for (std::size_t i = 0; i < weights; ++i) s.theta[static_cast<Eigen::Index>(i)] = sd * normal(rng);
    s.theta0 = s.theta;
    m.layers.push_back(std::move(s));
  }
  return m;
}

void ToyModel::anchor() {
  for (auto& l : layers) l.theta0 = l.theta;
}

std::size_t ToyModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.theta.size());
  return n;
}

LossGrad loss_and_grad(const ToyModel& m, const Dataset& data, const std::vector<std::size_t>& idx) {
  check_batch(data, idx);
  const Forward f = forward(m, data, idx);
  const auto h = static_cast<Eigen::Index>(m.hidden);
  const auto c = static_cast<Eigen::Index>(m.n_classes);
  const Eigen::Index b = f.logits.rows();

  ColMatrix d = f.logits;
  d.colwise() -= d.rowwise().maxCoeff();
  d = d.array().exp();
  const Eigen::VectorXd row_sum = d.rowwise().sum();
  LossGrad out;
  for (Eigen::Index i = 0; i < b; ++i) {
    d.row(i) /= row_sum[i];
    const auto y = static_cast<Eigen::Index>(data.labels[idx.empty() ? static_cast<std::size_t>(i) : idx[static_cast<std::size_t>(i)]]);
    out.loss -= std::log(d(i, y));
    d(i, y) -= 1.0;
  }
  out.loss /= static_cast<double>(b);
  d /= static_cast<double>(b);

  ConstWeights wf(m.layers[2].theta.data(), h, 2 * h);
  ConstWeights wh(m.layers[3].theta.data(), c, h);
  const ColMatrix dz = ((d * wh).array() * (1.0 - f.z.array().square())).matrix();
  const ColMatrix da = dz * wf;
  const ColMatrix dav = (da.leftCols(h).array() * (1.0 - f.av.array().square())).matrix();
  const ColMatrix daq = (da.rightCols(h).array() * (1.0 - f.aq.array().square())).matrix();

  out.grads.resize(4);
  for (std::size_t l = 0; l < 4; ++l) out.grads[l].resize(m.layers[l].theta.size());
  Eigen::Map<RowMatrix>(out.grads[0].data(), h, static_cast<Eigen::Index>(m.d_v)) = dav.transpose() * f.v;
  Eigen::Map<RowMatrix>(out.grads[1].data(), h, static_cast<Eigen::Index>(m.d_q)) = daq.transpose() * f.q;
  Eigen::Map<RowMatrix>(out.grads[2].data(), h, 2 * h) = dz.transpose() * f.a;
  Eigen::Map<RowMatrix>(out.grads[3].data(), c, h) = d.transpose() * f.z;
  Eigen::Map<Eigen::RowVectorXd>(out.grads[3].data() + c * h, c) = d.colwise().sum();
  return out;
}

double loss(const ToyModel& m, const Dataset& data, const std::vector<std::size_t>& idx) {
  check_batch(data, idx);
  const Forward f = forward(m, data, idx);
  double total = 0.0;
  for (Eigen::Index i = 0; i < f.logits.rows(); ++i) {
    const double mx = f.logits.row(i).maxCoeff();
    const double lse = mx + std::log((f.logits.row(i).array() - mx).exp().sum());
    const auto y = static_cast<Eigen::Index>(data.labels[idx.empty() ? static_cast<std::size_t>(i) : idx[static_cast<std::size_t>(i)]]);
    total += lse - f.logits(i, y);
  }
  return total / static_cast<double>(f.logits.rows());
}

std::vector<int> predict(const ToyModel& m, const Dataset& data) {
  check_batch(data, {});
  const Forward f = forward(m, data, {});
  std::vector<int> out(static_cast<std::size_t>(f.logits.rows()));
  for (Eigen::Index i = 0; i < f.logits.rows(); ++i) {
    Eigen::Index arg = 0;
    f.logits.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

double evaluate(const ToyModel& m, const Dataset& data) {
  if (data.human.size() != data.size()) {
    throw Error(Errc::WrongAnswerCount, "dataset has no simulated annotator answers");
  }
  const auto pred = predict(m, data);
  double total = 0.0;
  VqaAnswerSet ans;
  ans.human_answers.resize(kHumanAnswers);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ans.predicted = answer_text(pred[i]);
    for (std::size_t k = 0; k < kHumanAnswers; ++k) ans.human_answers[k] = answer_text(data.human[i][k]);
    total += vqa_accuracy(ans);
  }
  // Each term is a multiple of 1/3; snap the sum to remove accumulated rounding.
  total = std::round(total * 3.0) / 3.0;
  return 100.0 * total / static_cast<double>(pred.size());
}

namespace {

void sgd_epochs(ToyModel& m, const Dataset& data, std::size_t epochs, double lr, std::size_t batch,
                std::mt19937_64& rng) {
  auto order = iota_indices(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += batch) {
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(s),
                 order.begin() + static_cast<std::ptrdiff_t>(std::min(s + batch, order.size())));
      const auto lg = loss_and_grad(m, data, idx);
      if (!std::isfinite(lg.loss)) throw Error(Errc::DivergedLoss, "pre-training loss diverged", e);
      for (std::size_t l = 0; l < m.layers.size(); ++l) m.layers[l].theta -= lr * lg.grads[l];
    }
  }
}

Eigen::VectorXd project_or_freeze(const LayerState& s) { return s.gamma > 0.0 ? pgm_project(s) : s.theta0; }

}  // namespace

ToyModel pretrain(const SyntheticTask& task, const TaskData& data, const PretrainOptions& options) {
  ToyModel m = ToyModel::init(task, task.seed);
  auto rng = split_engine(task.seed, 200);
  sgd_epochs(m, data.pretrain, options.epochs, options.lr, options.batch_size, rng);
  m.anchor();
  return m;
}

TrainResult train(const SyntheticTask& task, const TaskData& data, const ToyModel& base, const MethodConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  task.validate();
  if (options.epochs == 0 || options.batch_size == 0 || !(options.lr > 0.0)) {
    throw Error(Errc::InvalidConfig, "epochs, batch_size and lr must be positive");
  }
  ToyModel m = base;
  m.anchor();
  const std::size_t n_layers = m.layers.size();
  const bool learned_gamma = cfg.method == Method::TPGM || cfg.method == Method::FTP;
  for (auto& l : m.layers) l.gamma = learned_gamma ? initial_gamma(static_cast<std::size_t>(l.theta.size())) : 0.0;

  TrainResult r;
  r.config = cfg;
  r.gamma_history.assign(n_layers, {});
  r.deviation_history.assign(n_layers, {});

  auto shuffle_rng = split_engine(options.seed, 300);
  auto val_rng = split_engine(options.seed, 301);
  std::uniform_int_distribution<std::size_t> val_pick(0, data.val.size() - 1);
  std::vector<bool> contracted(n_layers, false);
  std::vector<std::size_t> prev_batch;
  auto order = iota_indices(data.train.size());
  std::vector<std::size_t> idx, val_idx(options.batch_size);
  std::vector<Eigen::VectorXd> raw(n_layers);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const bool head_only =
        cfg.method == Method::LinearProbe || (cfg.method == Method::LPFT && epoch < cfg.lp_epochs);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t s = 0; s < order.size(); s += options.batch_size) {
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(s),
                 order.begin() + static_cast<std::ptrdiff_t>(std::min(s + options.batch_size, order.size())));
      LossGrad lg = loss_and_grad(m, data.train, idx);
      if (!std::isfinite(lg.loss)) {
        throw Error(Errc::DivergedLoss, "loss became non-finite in epoch " + std::to_string(epoch), epoch);
      }

      for (std::size_t l = 0; l < n_layers; ++l) {
        if (head_only && l != kHeadLayer) continue;
        LayerState& layer = m.layers[l];
        if (cfg.method == Method::SPD && contracted[l]) {
          lg.grads[l] += l2sp_grad(layer.theta, layer.theta0, cfg.lambda);
        }
        layer.theta -= options.lr * lg.grads[l];
        // Proximal form of the deviation penalty; stable for any lambda.
        if (cfg.method == Method::L2SP && cfg.lambda > 0.0) {
          layer.theta = layer.theta0 + (layer.theta - layer.theta0) / (1.0 + options.lr * cfg.lambda);
        }
      }

      if (learned_gamma) {
        ToyModel projected = m;
        for (std::size_t l = 0; l < n_layers; ++l) {
          raw[l] = m.layers[l].theta;
          projected.layers[l].theta = project_or_freeze(m.layers[l]);
        }
        const Dataset* gamma_data = nullptr;
        const std::vector<std::size_t>* gamma_idx = nullptr;
        if (cfg.method == Method::TPGM) {
          for (auto& i : val_idx) i = val_pick(val_rng);
          gamma_data = &data.val;
          gamma_idx = &val_idx;
        } else if (!prev_batch.empty()) {
          gamma_data = &data.train;
          gamma_idx = &prev_batch;
        }
        if (gamma_data) {
          const auto gv = loss_and_grad(projected, *gamma_data, *gamma_idx).grads;
          for (std::size_t l = 0; l < n_layers; ++l) {
            LayerState& layer = m.layers[l];
            if (!projection_active(layer)) continue;
            const double g = tpgm_gamma_grad(layer, gv[l]);
            layer.gamma = cfg.method == Method::TPGM ? std::max(layer.gamma - cfg.gamma_lr * g, 0.0)
                                                     : ftp_gamma_update(layer, g, cfg);
          }
        }
        for (auto& layer : m.layers) layer.theta = project_or_freeze(layer);
        prev_batch = idx;
      }

      if (cfg.method == Method::SPD) {
        const auto gn = loss_and_grad(m, data.train, idx).grads;
        const auto outcome = spd_apply(m.layers, gn, cfg);
        for (std::size_t l = 0; l < n_layers; ++l) {
          m.layers[l].theta = outcome[l].theta;
          m.layers[l].gamma = outcome[l].gamma;
          contracted[l] = outcome[l].contracted;
        }
      }
    }
    for (std::size_t l = 0; l < n_layers; ++l) {
      r.gamma_history[l].push_back(m.layers[l].gamma);
      r.deviation_history[l].push_back(deviation_norm(m.layers[l]));
    }
    if (options.on_epoch) options.on_epoch(epoch, m);
  }

  if (cfg.method == Method::WiSE) {
    for (auto& layer : m.layers) layer.theta = wise_interpolate(layer.theta0, layer.theta, cfg.alpha);
  }
  r.id_acc = evaluate(m, data.id_test);
  for (const auto& ood : data.ood_test) r.ood_acc.push_back(evaluate(m, ood));
  r.model = std::move(m);
  return r;
}

double BenchmarkRow::ood_average() const {
  if (!result || result->ood_acc.empty()) return 0.0;
  double s = 0.0;
  for (double a : result->ood_acc) s += a;
  return s / static_cast<double>(result->ood_acc.size());
}

BenchmarkTable run_benchmark(const SyntheticTask& task, const std::vector<MethodConfig>& methods,
                             const TrainOptions& options, const PretrainOptions& pre) {
  const TaskData data = generate(task);
  const ToyModel base = pretrain(task, data, pre);
  BenchmarkTable table;
  for (const auto& s : task.ood_specs) table.ood_names.push_back(s.name);
  table.pretrained_id_acc = evaluate(base, data.id_test);
  for (const auto& ood : data.ood_test) table.pretrained_ood_acc.push_back(evaluate(base, ood));
  for (const auto& cfg : methods) {
    BenchmarkRow row;
    row.config = cfg;
    try {
      row.result = train(task, data, base, cfg, options);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace shiftkit
