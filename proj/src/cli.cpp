#include "shiftkit/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <random>
#include <set>

#include <CLI11.hpp>

#include "shiftkit/correlation.hpp"
#include "shiftkit/error.hpp"
#include "shiftkit/ingest.hpp"
#include "shiftkit/modality_importance.hpp"
#include "shiftkit/report.hpp"
#include "shiftkit/shift_metrics.hpp"
#include "shiftkit/tables.hpp"
#include "shiftkit/toy_trainer.hpp"

namespace shiftkit {

namespace fs = std::filesystem;

namespace {

ShrinkagePolicy parse_shrinkage(const std::string& text) {
  if (text == "auto") return ShrinkagePolicy::automatic();
  constexpr std::string_view prefix = "fixed=";
  if (text.rfind(prefix, 0) == 0) {
    double eps = 0.0;
    try {
      eps = parse_double(std::string_view(text).substr(prefix.size()));
    } catch (const Error&) {
      eps = -1.0;
    }
    if (std::isfinite(eps) && eps >= 0.0) return ShrinkagePolicy::fixed(eps);
  }
  throw Error(Errc::InvalidConfig, "--shrinkage must be 'auto' or 'fixed=<eps>' with eps >= 0, got '" + text + "'");
}

std::string file_token(const std::string& text) {
  std::string out = text;
  for (auto& c : out) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.') c = '_';
  }
  return out;
}

struct Context {
  const RunConfig& cfg;
  std::ostream& out;
  fs::path out_dir;
  DatasetManifest manifest;
  ScoringOptions scoring;
};

void require_manifest(const RunConfig& cfg) {
  if (cfg.manifest_path.empty()) {
    throw Error(Errc::InvalidConfig, "--manifest is required for '" + cfg.command + "'");
  }
}

std::vector<ModalityTag> parse_tags(const std::vector<std::string>& texts) {
  std::vector<ModalityTag> tags;
  for (const auto& t : texts) tags.push_back(ModalityTag::parse(t));
  return tags;
}

/// Tags given on the command line, or every tag the ID-train entry carries.
std::vector<ModalityTag> tags_or_all(const Context& ctx) {
  if (!ctx.cfg.tags.empty()) return parse_tags(ctx.cfg.tags);
  std::vector<ModalityTag> tags;
  for (const auto& [tag, path] : ctx.manifest.id_train().embedding_paths) tags.push_back(tag);
  if (tags.empty()) throw Error(Errc::MissingEmbedding, "ID-train entry lists no embeddings");
  return tags;
}

ModalityTag single_tag(const Context& ctx) {
  if (ctx.cfg.tags.size() != 1) throw Error(Errc::InvalidConfig, "'" + ctx.cfg.command + "' needs exactly one --tag");
  return ModalityTag::parse(ctx.cfg.tags.front());
}

const ShiftSeries& series_for(const TagScores& scores, const std::string& dataset_id) {
  if (scores.train.dataset_id == dataset_id) return scores.train;
  for (const auto& s : scores.tests) {
    if (s.dataset_id == dataset_id) return s;
  }
  throw Error(Errc::MissingEmbedding, "no scores for dataset '" + dataset_id + "'");
}

std::vector<double> score_edges(const std::vector<const ShiftSeries*>& series, std::size_t bins) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto* s : series) {
    for (double v : s->scores) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) throw Error(Errc::EmptyList, "no scores to bin");
  // Top edge nudged up so the maximum lands in the last bin.
  const double span = hi > lo ? hi - lo : 1.0;
  return linear_edges(lo, hi + span * 1e-9, bins);
}

void cmd_validate(Context& ctx) {
  std::size_t embeddings = 0, records = 0;
  for (const auto& e : ctx.manifest.entries) {
    for (const auto& [tag, path] : e.embedding_paths) {
      const auto m = read_embedding_matrix(path);
      ++embeddings;
      ctx.out << e.dataset_id << "\t" << tag.str() << "\t" << m.rows() << "x" << m.cols() << "\n";
    }
    if (e.attention_path) {
      const auto recs = read_attention_records(*e.attention_path);
      records += recs.size();
      ctx.out << e.dataset_id << "\tattention\t" << recs.size() << " records\n";
    }
  }
  ctx.out << "ok: " << ctx.manifest.entries.size() << " datasets, " << embeddings << " embedding files, " << records
          << " attention records\n";
}

void cmd_score(Context& ctx) {
  if (ctx.cfg.tags.empty()) throw Error(Errc::InvalidConfig, "'score' needs at least one --tag");
  CsvTable summary({"dataset_id", "tag", "score_mean", "n"});
  CsvTable samples({"dataset_id", "tag", "row", "score"});
  for (const auto& tag : parse_tags(ctx.cfg.tags)) {
    const TagScores scores = score_manifest(ctx.manifest, tag, ctx.scoring);
    std::vector<const ShiftSeries*> all{&scores.train};
    for (const auto& s : scores.tests) all.push_back(&s);
    const auto edges = score_edges(all, ctx.cfg.bin_count);
    for (const auto* s : all) {
      summary.add_row({s->dataset_id, tag.str(), format_double(s->average), std::to_string(s->size())});
      for (std::size_t i = 0; i < s->size(); ++i) {
        samples.add_row({s->dataset_id, tag.str(), std::to_string(i), format_double(s->scores[i])});
      }
      write_table(ctx.out_dir, "hist_" + file_token(tag.str()) + "_" + file_token(s->dataset_id),
                  histogram_to_table(histogram(s->scores, edges)));
    }
  }
  write_table(ctx.out_dir, "shift_scores", summary);
  write_table(ctx.out_dir, "sample_scores", samples);
  ctx.out << "wrote shift_scores.csv (" << summary.rows().size() << " rows)\n";
}

void cmd_heatmap(Context& ctx) {
  const ShiftHeatmap map = build_heatmap(ctx.manifest, tags_or_all(ctx), ctx.scoring);
  write_csv(ctx.out_dir / "heatmap.csv", heatmap_to_table(map));
  write_file_atomic(ctx.out_dir / "heatmap.json", heatmap_to_json(map));
  ctx.out << "wrote heatmap.csv (" << map.row_labels.size() << " x " << map.col_labels.size() << ")\n";
}

/// State labels that have a V, Q and VQ row, in first-appearance order.
std::vector<std::string> complete_states(const ShiftHeatmap& map) {
  std::vector<std::string> order;
  std::map<std::string, std::set<Modality>> seen;
  for (const auto& t : map.row_labels) {
    const auto label = t.state_label();
    if (!seen.count(label)) order.push_back(label);
    seen[label].insert(t.modality);
  }
  std::vector<std::string> out;
  for (const auto& s : order) {
    if (seen[s].size() == 3) out.push_back(s);
  }
  return out;
}

void cmd_correlate(Context& ctx) {
  const ShiftHeatmap map = ctx.cfg.heatmap_path.empty() ? build_heatmap(ctx.manifest, tags_or_all(ctx), ctx.scoring)
                                                        : read_heatmap_csv(ctx.cfg.heatmap_path);
  const auto methods = ctx.cfg.methods.empty() ? complete_states(map) : ctx.cfg.methods;
  if (methods.empty()) throw Error(Errc::MissingRow, "heatmap has no state with V, Q and VQ rows");
  CsvTable perf({"method", "V", "Q", "Joint", "n_datasets"});
  for (const auto& m : methods) {
    const auto r = shift_perf_correlation(map, ctx.manifest, m);
    perf.add_row({m, format_double(r.r_v), format_double(r.r_q), format_double(r.r_joint),
                  std::to_string(r.datasets_used.size())});
  }
  write_table(ctx.out_dir, "shift_perf", perf);
  ctx.out << "wrote shift_perf.csv (" << methods.size() << " methods)\n";

  const bool modal = !ctx.cfg.v_tag.empty() || !ctx.cfg.q_tag.empty() || !ctx.cfg.joint_tag.empty();
  if (!modal) return;
  if (ctx.cfg.v_tag.empty() || ctx.cfg.q_tag.empty() || ctx.cfg.joint_tag.empty()) {
    throw Error(Errc::InvalidConfig, "--v-tag, --q-tag and --joint-tag must be given together");
  }
  const auto v = score_manifest(ctx.manifest, ModalityTag::parse(ctx.cfg.v_tag), ctx.scoring);
  const auto q = score_manifest(ctx.manifest, ModalityTag::parse(ctx.cfg.q_tag), ctx.scoring);
  const auto j = score_manifest(ctx.manifest, ModalityTag::parse(ctx.cfg.joint_tag), ctx.scoring);
  CsvTable corr({"dataset_id", "r_v_joint", "r_q_joint", "n"});
  CsvTable comp({"dataset_id", "pct_oodV_idQ", "pct_idV_oodQ", "pct_oodV_oodQ", "pct_idV_idQ", "joint_ood"});
  std::vector<ModalCorrelation> per;
  for (std::size_t i = 0; i < j.tests.size(); ++i) {
    per.push_back(modal_correlation(v.tests[i], q.tests[i], j.tests[i]));
    const auto& c = per.back();
    corr.add_row({c.dataset_id, format_double(c.r_v_joint), format_double(c.r_q_joint), std::to_string(c.n)});
    const auto o = ood_composition(v.tests[i], q.tests[i], j.tests[i], ctx.cfg.tv, ctx.cfg.tq, ctx.cfg.tj);
    comp.add_row({j.tests[i].dataset_id, format_double(o.pct_oodV_idQ), format_double(o.pct_idV_oodQ),
                  format_double(o.pct_oodV_oodQ), format_double(o.pct_idV_idQ), std::to_string(o.joint_ood)});
  }
  const auto avg = average_modal_correlation(per);
  corr.add_row({"average", format_double(avg.r_v_joint), format_double(avg.r_q_joint), ""});
  write_table(ctx.out_dir, "modal_correlation", corr);
  write_table(ctx.out_dir, "ood_composition", comp);
  ctx.out << "wrote modal_correlation.csv and ood_composition.csv\n";
}

void cmd_mi(Context& ctx) {
  const ModalityTag tag = single_tag(ctx);
  const TagScores scores = score_manifest(ctx.manifest, tag, ctx.scoring);
  std::vector<std::string> datasets = ctx.cfg.datasets;
  if (datasets.empty()) {
    for (const auto& e : ctx.manifest.entries) {
      if (e.attention_path) datasets.push_back(e.dataset_id);
    }
  }
  if (datasets.empty()) throw Error(Errc::EmptyList, "no dataset carries an attention file");

  // Attention records and embedding rows are aligned by position.
  std::vector<MiResult> results;
  ShiftSeries pooled;
  pooled.dataset_id = "pooled";
  pooled.tag = tag;
  for (const auto& id : datasets) {
    const ManifestEntry* e = ctx.manifest.find(id);
    if (!e) throw Error(Errc::BadManifest, "unknown dataset '" + id + "'");
    if (!e->attention_path) throw Error(Errc::BadManifest, "dataset '" + id + "' has no attention file");
    const auto records = read_attention_records(*e->attention_path);
    const ShiftSeries& s = series_for(scores, id);
    if (records.size() != s.size()) {
      throw Error(Errc::UnmatchedSampleId, "dataset '" + id + "' has " + std::to_string(records.size()) +
                                               " attention records but " + std::to_string(s.size()) + " embeddings");
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
      MiResult r = sample_mi(records[i]);
      r.sample_id = id + "/" + records[i].sample_id;
      pooled.sample_ids.push_back(r.sample_id);
      pooled.scores.push_back(s.scores[i]);
      results.push_back(std::move(r));
    }
  }

  const MiTable table = id_ood_mi_table(results, pooled, ctx.cfg.tj);
  CsvTable t({"split", "mi_v", "mi_q", "n"});
  auto add = [&](const char* name, const std::optional<MiPair>& p, std::size_t n) {
    t.add_row({name, p ? format_double(p->mi_v) : "", p ? format_double(p->mi_q) : "", std::to_string(n)});
  };
  add("ID", table.id, table.n_id);
  add("OOD", table.ood, table.n_ood);
  add("Overall", table.overall, results.size());
  write_table(ctx.out_dir, "mi_table", t);

  const auto edges = score_edges({&pooled}, ctx.cfg.bin_count);
  const MiShiftProfile prof = mi_vs_shift(results, pooled, edges);
  CsvTable p({"bin_lo", "bin_hi", "mi_v_mean", "mi_q_mean", "count"});
  for (std::size_t b = 0; b < prof.counts.size(); ++b) {
    p.add_row({format_double(prof.bin_edges[b]), format_double(prof.bin_edges[b + 1]),
               format_optional(prof.mi_v_mean[b]), format_optional(prof.mi_q_mean[b]),
               std::to_string(prof.counts[b])});
  }
  write_table(ctx.out_dir, "mi_profile", p);
  ctx.out << "wrote mi_table.csv and mi_profile.csv (" << results.size() << " samples)\n";
}

void cmd_sample_regions(Context& ctx) {
  const ModalityTag tag = single_tag(ctx);
  if (ctx.cfg.datasets.size() != 1) throw Error(Errc::InvalidConfig, "'sample-regions' needs exactly one --dataset");
  const TagScores scores = score_manifest(ctx.manifest, tag, ctx.scoring);
  const ShiftSeries& test = series_for(scores, ctx.cfg.datasets.front());
  const auto regions = sample_regions(scores.train.scores, test.scores, ctx.cfg.k, ctx.cfg.seed);
  CsvTable t({"region", "sample_index", "score", "k", "population"});
  for (const auto& r : regions) {
    for (auto i : r.sample_ids) {
      t.add_row({std::string(to_string(r.region)), std::to_string(i), format_double(test.scores[i]),
                 std::to_string(r.k), std::to_string(r.population)});
    }
  }
  write_table(ctx.out_dir, "regions", t);
  ctx.out << "wrote regions.csv (" << t.rows().size() << " samples)\n";
}

RowMatrix subsample_rows(const RowMatrix& m, std::size_t max_rows, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(m.rows());
  if (max_rows == 0 || n <= max_rows) return m;
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < max_rows; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(max_rows);
  std::sort(pool.begin(), pool.end());
  RowMatrix out(static_cast<Eigen::Index>(max_rows), m.cols());
  for (std::size_t i = 0; i < max_rows; ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(pool[i]));
  return out;
}

void cmd_mmd(Context& ctx) {
  MmdEstimator est = MmdEstimator::Biased;
  if (ctx.cfg.estimator == "unbiased") {
    est = MmdEstimator::Unbiased;
  } else if (ctx.cfg.estimator != "biased") {
    throw Error(Errc::InvalidConfig, "--estimator must be 'biased' or 'unbiased'");
  }
  std::mt19937_64 rng(ctx.cfg.seed);
  CsvTable t({"tag", "dataset_id", "mmd", "n_train", "n_test"});
  const auto& train_entry = ctx.manifest.id_train();
  for (const auto& tag : tags_or_all(ctx)) {
    const EmbeddingMatrix train_full = load_embedding(ctx.manifest, train_entry.dataset_id, tag);
    std::optional<Standardizer> z;
    if (ctx.cfg.standardize) z = Standardizer::fit(train_full.data);
    RowMatrix train = subsample_rows(train_full.data, ctx.cfg.max_samples, rng);
    if (z) train = z->apply(train);
    for (const auto* e : ctx.manifest.test_entries()) {
      RowMatrix test = subsample_rows(load_embedding(ctx.manifest, e->dataset_id, tag).data, ctx.cfg.max_samples, rng);
      if (z) test = z->apply(test);
      const double v = mmd_rbf(train, test, ctx.cfg.mmd_gamma, ctx.cfg.mmd_scale, est, ctx.cfg.threads);
      t.add_row({tag.str(), e->dataset_id, format_double(v), std::to_string(train.rows()), std::to_string(test.rows())});
    }
  }
  write_table(ctx.out_dir, "mmd", t);
  ctx.out << "wrote mmd.csv (" << t.rows().size() << " rows)\n";
}

void cmd_toybench(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  std::vector<Method> methods;
  if (c.methods.empty() || (c.methods.size() == 1 && c.methods[0] == "all")) {
    methods.assign(std::begin(kAllMethods), std::end(kAllMethods));
  } else {
    for (const auto& m : c.methods) methods.push_back(parse_method(m));
  }
  std::vector<MethodConfig> configs;
  for (auto m : methods) {
    MethodConfig mc = MethodConfig::defaults(m);
    mc.alpha = c.alpha;
    mc.kappa = c.kappa;
    mc.spd_contraction = c.spd_contraction;
    mc.gamma_lr = c.gamma_lr;
    mc.lp_epochs = c.lp_epochs;
    mc.lambda = m == Method::L2SP ? c.l2sp_lambda : m == Method::SPD ? c.spd_lambda : 0.0;
    mc.validate();
    configs.push_back(mc);
  }
  SyntheticTask task;
  if (c.task == "default") {
    task = SyntheticTask::make(c.seed);
  } else if (c.task == "control") {
    task = SyntheticTask::make_control(c.seed);
  } else {
    throw Error(Errc::InvalidConfig, "--task must be 'default' or 'control'");
  }
  TrainOptions opt;
  opt.epochs = c.epochs;
  opt.lr = c.lr;
  opt.seed = c.seed;
  const BenchmarkTable table = run_benchmark(task, configs, opt);

  CsvTable bench = benchmark_to_table(table);
  CsvRow pre{"pretrained", format_double(table.pretrained_id_acc)};
  double avg = 0.0;
  for (double a : table.pretrained_ood_acc) {
    pre.push_back(format_double(a));
    avg += a;
  }
  pre.push_back(format_double(table.pretrained_ood_acc.empty() ? 0.0 : avg / table.pretrained_ood_acc.size()));
  pre.push_back("");
  CsvTable with_pre(bench.header());
  with_pre.add_row(pre);
  for (const auto& r : bench.rows()) with_pre.add_row(r);
  write_table(ctx.out_dir, "benchmark", with_pre);
  write_table(ctx.out_dir, "gamma_history", gamma_history_to_table(table));

  // Console summary rounds to two decimals; the files keep full precision.
  auto cell = [](const std::string& text) {
    double v = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc() || end != text.data() + text.size()) return text;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  for (std::size_t i = 0; i < with_pre.header().size(); ++i) ctx.out << (i ? "\t" : "") << with_pre.header()[i];
  ctx.out << "\n";
  for (const auto& r : with_pre.rows()) {
    for (std::size_t i = 0; i < r.size(); ++i) ctx.out << (i ? "\t" : "") << (i == 0 ? r[i] : cell(r[i]));
    ctx.out << "\n";
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Modality shift analysis and robust fine-tuning toolkit", "shiftkit"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  app.footer("Exit status: 0 success, 1 invalid input or arguments, 2 internal error.");

  app.add_option("--manifest", cfg.manifest_path, "Dataset manifest JSON (required except for toybench)")
      ->default_str("none");
  app.add_option("--out", cfg.output_dir, "Output directory");
  app.add_option("--seed", cfg.seed, "Seed for every random choice");
  app.add_option("--shrinkage", cfg.shrinkage, "Covariance shrinkage: auto or fixed=<eps>");
  app.add_option("--threads", cfg.threads, "Worker threads")->check(CLI::Range(1u, 1024u));
  app.add_flag("--standardize", cfg.standardize, "Z-score embeddings on ID-train statistics before fitting")
      ->default_str("off");
  app.add_option("--tv", cfg.tv, "Image shift threshold");
  app.add_option("--tq", cfg.tq, "Question shift threshold");
  app.add_option("--tj", cfg.tj, "Joint shift threshold (scores equal to it are ID)");
  app.add_option("--mmd-gamma", cfg.mmd_gamma, "RBF kernel gamma");
  app.add_option("--mmd-scale", cfg.mmd_scale, "MMD scale-up factor");
  app.add_option("--bins", cfg.bin_count, "Histogram bin count")->check(CLI::Range(std::size_t{1}, std::size_t{1} << 20));

  auto* validate = app.add_subcommand("validate", "Check a manifest and every file it references");
  auto* score = app.add_subcommand("score", "Per-sample shift scores and histograms for one or more tags");
  score->add_option("--tag", cfg.tags, "Modality tag, e.g. VQ:pali:FT(vanilla)")->delimiter(',')->default_str("none");
  auto* heatmap = app.add_subcommand("heatmap", "Average shift of every test dataset for each tag");
  heatmap->add_option("--tag", cfg.tags, "Row tags")->delimiter(',')->default_str("all ID-train tags");
  auto* correlate = app.add_subcommand("correlate", "Shift-performance and modal correlations");
  correlate->add_option("--heatmap", cfg.heatmap_path, "Read averages from this heatmap CSV instead of scoring")
      ->default_str("none");
  correlate->add_option("--tag", cfg.tags, "Heatmap tags when scoring")->delimiter(',')->default_str("all ID-train tags");
  correlate->add_option("--method", cfg.methods, "Training states (PT or method name)")
      ->delimiter(',')
      ->default_str("every state with V, Q and VQ rows");
  correlate->add_option("--v-tag", cfg.v_tag, "Image tag for modal correlation and OOD composition")->default_str("none");
  correlate->add_option("--q-tag", cfg.q_tag, "Question tag for modal correlation and OOD composition")->default_str("none");
  correlate->add_option("--joint-tag", cfg.joint_tag, "Joint tag for modal correlation and OOD composition")->default_str("none");
  auto* mi = app.add_subcommand("mi", "Modality importance tables and shift profile");
  mi->add_option("--tag", cfg.tags, "Tag whose shift scores bin the samples")->default_str("none");
  mi->add_option("--dataset", cfg.datasets, "Datasets to include")
      ->delimiter(',')
      ->default_str("all with attention");
  auto* regions = app.add_subcommand("sample-regions", "Draw samples from the tails, peak and intersect region");
  regions->add_option("--tag", cfg.tags, "Modality tag")->default_str("none");
  regions->add_option("--dataset", cfg.datasets, "Test dataset")->default_str("none");
  regions->add_option("--k", cfg.k, "Samples per region");
  auto* mmd = app.add_subcommand("mmd", "RBF MMD between ID-train and each test dataset");
  mmd->add_option("--tag", cfg.tags, "Tags")->delimiter(',')->default_str("all ID-train tags");
  mmd->add_option("--max-samples", cfg.max_samples, "Seeded subsample size per set (0 keeps all)");
  mmd->add_option("--estimator", cfg.estimator, "biased or unbiased");
  auto* toy = app.add_subcommand("toybench", "Fine-tuning methods on the synthetic task");
  toy->add_option("--methods", cfg.methods, "all or a list of vanilla,linear_probe,lp_ft,wise,l2sp,tpgm,ftp,spd")
      ->delimiter(',')
      ->default_str("all");
  toy->add_option("--task", cfg.task, "default or control (unshifted OOD split)");
  toy->add_option("--epochs", cfg.epochs, "Fine-tuning epochs")->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
  toy->add_option("--lr", cfg.lr, "Learning rate")->check(CLI::PositiveNumber);
  toy->add_option("--alpha", cfg.alpha, "WiSE mixing weight");
  toy->add_option("--kappa", cfg.kappa, "FTP positive-gradient annealing");
  toy->add_option("--l2sp-lambda", cfg.l2sp_lambda, "L2-SP penalty strength");
  toy->add_option("--spd-lambda", cfg.spd_lambda, "SPD decay toward pre-trained weights on contracted layers");
  toy->add_option("--spd-contraction", cfg.spd_contraction, "SPD contraction factor");
  toy->add_option("--gamma-lr", cfg.gamma_lr, "Constraint learning rate");
  toy->add_option("--lp-epochs", cfg.lp_epochs, "LP-FT head-only epochs");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "shiftkit: error: " << msg << "\n";
    return kExitValidation;
  }

  try {
    cfg.command = app.get_subcommands().front()->get_name();
    Context ctx{cfg, out, fs::path(cfg.output_dir), {}, {}};
    ctx.scoring.shrinkage = parse_shrinkage(cfg.shrinkage);
    ctx.scoring.standardize = cfg.standardize;
    ctx.scoring.threads = cfg.threads;
    if (!std::isfinite(cfg.tv) || !std::isfinite(cfg.tq) || !std::isfinite(cfg.tj)) {
      throw Error(Errc::InvalidConfig, "thresholds must be finite");
    }
    if (!(cfg.mmd_gamma > 0.0) || !std::isfinite(cfg.mmd_scale)) {
      throw Error(Errc::InvalidConfig, "--mmd-gamma must be > 0 and --mmd-scale finite");
    }
    if (cfg.command != "toybench") {
      require_manifest(cfg);
      ctx.manifest = load_manifest(cfg.manifest_path);
    }
    if (cfg.command != "validate") {
      std::error_code ec;
      fs::create_directories(ctx.out_dir, ec);
      if (ec) throw Error(Errc::IoFailure, "cannot create output directory " + cfg.output_dir);
    }

    if (app.got_subcommand(validate)) cmd_validate(ctx);
    else if (app.got_subcommand(score)) cmd_score(ctx);
    else if (app.got_subcommand(heatmap)) cmd_heatmap(ctx);
    else if (app.got_subcommand(correlate)) cmd_correlate(ctx);
    else if (app.got_subcommand(mi)) cmd_mi(ctx);
    else if (app.got_subcommand(regions)) cmd_sample_regions(ctx);
    else if (app.got_subcommand(mmd)) cmd_mmd(ctx);
    else if (app.got_subcommand(toy)) cmd_toybench(ctx);
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "shiftkit: error: " << msg << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "shiftkit: internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitOk;
}

}  // namespace shiftkit
