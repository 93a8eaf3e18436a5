// cplink command line front end. Subcommands cover the whole pipeline:
// synth -> build-links -> decompose -> metrics / evaluate.
//
// Exit status: 0 success, 1 bad input (config, file, shape), 2 solver abort.
// Reports never contain wall-clock times, so repeated runs with the same
// config and seed are byte-identical; timings go to stdout only.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "cplink/cplink.hpp"

namespace {

bool verbose_enabled() {
  const char* v = std::getenv("CPLINK_VERBOSE");
  return v != nullptr && *v != '\0' && std::string(v) != "0";
}

std::array<cplink::Index, 3> parse_dims_value(const std::string& value,
                                              const std::string& origin) {
  const auto toks = cplink::detail::split_ws(value);
  if (toks.size() != 3)
    throw cplink::validation_error(origin + ": dims must hold three integers");
  std::array<cplink::Index, 3> dims{};
  for (int m = 0; m < 3; ++m)
    dims[static_cast<std::size_t>(m)] =
        cplink::detail::parse_int(toks[static_cast<std::size_t>(m)], origin, 0);
  return dims;
}

cplink::SolverConfig solver_config_from(const cplink::KeyValueConfig& cfg) {
  cplink::SolverConfig sc;
  sc.rank = cfg.get_int("rank", sc.rank);
  sc.hyper.angular_weight = cfg.get_double("angular_weight", 0.0);
  sc.hyper.l2_weight = cfg.get_double("l2_weight", 0.0);
  sc.hyper.cannot_link_weight = cfg.get_double("cannot_link_weight", 0.0);
  const double theta_all = cfg.get_double("theta", 0.0);
  sc.hyper.angular_threshold = {cfg.get_double("theta1", theta_all),
                                cfg.get_double("theta2", theta_all),
                                cfg.get_double("theta3", theta_all)};
  sc.max_outer_iters = static_cast<int>(cfg.get_int("max_outer_iters", sc.max_outer_iters));
  sc.inner_steps_per_mode =
      static_cast<int>(cfg.get_int("inner_steps_per_mode", sc.inner_steps_per_mode));
  sc.tol = cfg.get_double("tol", sc.tol);
  sc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  sc.armijo.initial_step = cfg.get_double("armijo_initial_step", sc.armijo.initial_step);
  sc.armijo.shrink = cfg.get_double("armijo_shrink", sc.armijo.shrink);
  sc.armijo.sufficient_decrease =
      cfg.get_double("armijo_sufficient_decrease", sc.armijo.sufficient_decrease);
  sc.armijo.max_backtracks =
      static_cast<int>(cfg.get_int("armijo_max_backtracks", sc.armijo.max_backtracks));
  sc.hard_threshold_tau = cfg.get_double("hard_threshold_tau", sc.hard_threshold_tau);
  sc.bias_enabled = cfg.get_bool("bias_enabled", sc.bias_enabled);
  sc.bias_update = cfg.get_bool("bias_update", sc.bias_update);
  sc.bias_floor = cfg.get_double("bias_floor", sc.bias_floor);
  sc.sigma_init_fraction = cfg.get_double("sigma_init_fraction", sc.sigma_init_fraction);
  return sc;
}

const char* mode_name(int mode) {
  switch (mode) {
    case 1: return "patient";
    case 2: return "diagnosis";
    case 3: return "medication";
    default: throw cplink::validation_error("mode_name: mode must be 1, 2, or 3");
  }
}

// Statistics block shared between fit_report.txt and the metrics command; the
// two must agree key for key so a round trip is a plain string comparison.
void append_statistics(std::vector<std::pair<std::string, std::string>>& rows,
                       const cplink::SparseCountTensor& x, const cplink::KruskalModel& m,
                       const cplink::CannotLinkMatrix& links, double tau) {
  const auto stats = cplink::fit_statistics(x, m, tau);
  rows.emplace_back("metric_tau", cplink::fmt_double(tau));
  rows.emplace_back("kl_divergence", cplink::fmt_double(stats.kl_divergence));
  for (int mode = 1; mode <= 3; ++mode) {
    const auto i = static_cast<std::size_t>(mode - 1);
    rows.emplace_back(std::string("avg_nonzeros_") + mode_name(mode),
                      cplink::fmt_double(stats.avg_nonzeros[i]));
    rows.emplace_back(std::string("avg_cosine_") + mode_name(mode),
                      cplink::fmt_double(stats.avg_cosine[i]));
    rows.emplace_back(std::string("max_cosine_") + mode_name(mode),
                      cplink::fmt_double(stats.max_cosine[i]));
  }
  rows.emplace_back("violation_pct",
                    cplink::fmt_double(cplink::cannot_link_violation_pct(m, links, tau)));
}

std::vector<std::string> load_mode_vocab(const std::string& path, const char* key,
                                         cplink::Index expected) {
  auto vocab = cplink::read_vocab(path);
  if (static_cast<cplink::Index>(vocab.size()) != expected)
    throw cplink::validation_error(std::string(key) + ": vocabulary has " +
                                   std::to_string(vocab.size()) + " terms but the " +
                                   "tensor dimension is " + std::to_string(expected));
  return vocab;
}

void write_phenotypes(const std::string& path, const cplink::KruskalModel& m,
                      const std::vector<std::string>& diag_vocab,
                      const std::vector<std::string>& med_vocab, double tau,
                      int top_terms) {
  auto out = cplink::detail::open_for_write(path);
  for (cplink::Index r = 0; r < m.rank(); ++r) {
    out << "component " << r << " weight " << cplink::fmt_double(m.weights[r]);
    if (m.weights[r] == 0.0) {
      out << " (empty)\n";
      continue;
    }
    out << '\n';
    for (int mode = 2; mode <= 3; ++mode) {
      const auto& f = m.factor(mode);
      const auto& vocab = mode == 2 ? diag_vocab : med_vocab;
      std::vector<cplink::Index> idx;
      for (cplink::Index i = 0; i < f.rows(); ++i)
        if (f(i, r) > tau) idx.push_back(i);
      std::sort(idx.begin(), idx.end(), [&](cplink::Index a, cplink::Index b) {
        if (f(a, r) != f(b, r)) return f(a, r) > f(b, r);
        return a < b;
      });
      if (static_cast<int>(idx.size()) > top_terms) idx.resize(top_terms);
      for (cplink::Index i : idx)
        out << "  " << mode_name(mode) << ' ' << vocab[static_cast<std::size_t>(i)]
            << ' ' << cplink::fmt_double(f(i, r)) << '\n';
    }
  }
}

void print_report(const std::vector<std::pair<std::string, std::string>>& rows) {
  std::cout << cplink::report_to_string(rows);
}

// ---------------------------------------------------------------------------

int run_synth(const std::string& spec_path, const std::string& out_dir) {
  const auto cfg = cplink::KeyValueConfig::parse(spec_path);
  cplink::SynthSpec spec;
  if (cfg.has("dims")) spec.shape = parse_dims_value(cfg.get_string("dims", ""), spec_path);
  spec.rank = cfg.get_int("rank", spec.rank);
  if (cfg.has("support")) {
    const auto s = parse_dims_value(cfg.get_string("support", ""), spec_path);
    spec.support = {s[0], s[1], s[2]};
  }
  spec.component_scale = cfg.get_double("component_scale", spec.component_scale);
  spec.bias_fraction = cfg.get_double("bias_fraction", spec.bias_fraction);
  spec.cannot_link_fraction =
      cfg.get_double("cannot_link_fraction", spec.cannot_link_fraction);
  if (cfg.has("label_components")) {
    spec.label_rule.components.clear();
    for (const auto& tok :
         cplink::detail::split_ws(cfg.get_string("label_components", "")))
      spec.label_rule.components.push_back(cplink::detail::parse_int(tok, spec_path, 0));
  }
  spec.label_rule.quantile = cfg.get_double("label_quantile", spec.label_rule.quantile);
  spec.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  cfg.reject_unknown_keys();

  const auto data = cplink::generate(spec);
  std::filesystem::create_directories(out_dir);
  cplink::write_tensor(out_dir + "/tensor.txt", data.tensor);
  cplink::write_links(out_dir + "/links.txt", data.links);
  cplink::write_labels(out_dir + "/labels.txt", data.labels);
  cplink::write_model(out_dir + "/truth", data.truth);

  std::int64_t positives = 0;
  for (int y : data.labels) positives += y;
  std::vector<std::pair<std::string, std::string>> rows;
  rows.emplace_back("config_hash", cplink::content_hash(cfg.raw_text()));
  rows.emplace_back("dims", std::to_string(spec.shape[0]) + " " +
                                std::to_string(spec.shape[1]) + " " +
                                std::to_string(spec.shape[2]));
  rows.emplace_back("rank", std::to_string(spec.rank));
  rows.emplace_back("nnz", std::to_string(data.tensor.entries().size()));
  rows.emplace_back("total_count", std::to_string(data.tensor.total_sum()));
  rows.emplace_back("cannot_link_pairs", std::to_string(data.links.size()));
  rows.emplace_back("positive_labels", std::to_string(positives));
  cplink::write_report(out_dir + "/synth_report.txt", rows);
  print_report(rows);
  return 0;
}

int run_build_links(const std::string& corpus_path, const std::string& diag_vocab,
                    const std::string& med_vocab, double alpha,
                    const std::string& undefined_policy, const std::string& out_path) {
  cplink::UndefinedLift policy;
  if (undefined_policy == "exclude")
    policy = cplink::UndefinedLift::exclude;
  else if (undefined_policy == "constrain")
    policy = cplink::UndefinedLift::constrain;
  else
    throw cplink::validation_error("--undefined must be 'exclude' or 'constrain'");

  const auto corpus = cplink::read_corpus(corpus_path, diag_vocab, med_vocab);
  const auto lifts = cplink::compute_lift(corpus);
  const auto links = cplink::build_cannot_link(lifts, alpha, policy);
  cplink::write_links(out_path, links);

  const double density = static_cast<double>(links.size()) /
                         (static_cast<double>(links.rows()) * static_cast<double>(links.cols()));
  std::vector<std::pair<std::string, std::string>> rows;
  rows.emplace_back("documents", std::to_string(lifts.n_docs()));
  rows.emplace_back("dims", std::to_string(links.rows()) + " " + std::to_string(links.cols()));
  rows.emplace_back("alpha", cplink::fmt_double(alpha));
  rows.emplace_back("pairs", std::to_string(links.size()));
  rows.emplace_back("density", cplink::fmt_double(density));
  print_report(rows);
  return 0;
}

int run_decompose(const std::string& config_path, bool dry_run) {
  const auto cfg = cplink::KeyValueConfig::parse(config_path);
  const auto sc = solver_config_from(cfg);
  const std::string tensor_path = cfg.get_string("tensor", "");
  const std::string links_path = cfg.get_string("links", "");
  const std::string out_dir = cfg.get_string("out_dir", "");
  const std::string diag_vocab_path = cfg.get_string("diagnosis_vocab", "");
  const std::string med_vocab_path = cfg.get_string("medication_vocab", "");
  const double metric_tau = cfg.get_double("metric_tau", 0.01);
  const double phenotype_tau = cfg.get_double("phenotype_tau", sc.hard_threshold_tau);
  const int top_terms = static_cast<int>(cfg.get_int("top_terms", 10));
  const bool has_dims_key = cfg.has("dims");
  const std::string dims_value = cfg.get_string("dims", "");
  cfg.reject_unknown_keys();

  sc.validate();
  if (top_terms < 1) throw cplink::validation_error("top_terms must be >= 1");
  if (!(metric_tau >= 0.0)) throw cplink::validation_error("metric_tau must be >= 0");

  if (dry_run) {
    // Validates the config without touching tensors or the output directory,
    // so configs for data that is not on this machine still check out.
    cplink::Shape3 dims{0, 0, 0};
    if (has_dims_key) {
      dims = parse_dims_value(dims_value, config_path);
    } else if (!tensor_path.empty()) {
      const auto x = cplink::read_tensor(tensor_path);
      dims = {x.dim(1), x.dim(2), x.dim(3)};
    } else {
      throw cplink::validation_error(config_path +
                                     ": dry run needs either 'dims' or 'tensor'");
    }
    for (int m = 0; m < 3; ++m)
      if (dims[static_cast<std::size_t>(m)] < 1)
        throw cplink::validation_error(config_path + ": dims must be >= 1");
    std::vector<std::pair<std::string, std::string>> rows;
    rows.emplace_back("config_hash", cplink::content_hash(cfg.raw_text()));
    rows.emplace_back("dims", std::to_string(dims[0]) + " " + std::to_string(dims[1]) +
                                  " " + std::to_string(dims[2]));
    rows.emplace_back("rank", std::to_string(sc.rank));
    rows.emplace_back("dry_run", "ok");
    print_report(rows);
    return 0;
  }

  if (tensor_path.empty())
    throw cplink::validation_error(config_path + ": missing required key 'tensor'");
  if (out_dir.empty())
    throw cplink::validation_error(config_path + ": missing required key 'out_dir'");

  const auto x = cplink::read_tensor(tensor_path);
  if (has_dims_key) {
    const auto dims = parse_dims_value(dims_value, config_path);
    for (int m = 1; m <= 3; ++m)
      if (dims[static_cast<std::size_t>(m - 1)] != x.dim(m))
        throw cplink::validation_error(
            config_path + ": dims entry " + std::to_string(m) + " is " +
            std::to_string(dims[static_cast<std::size_t>(m - 1)]) +
            " but the tensor has " + std::to_string(x.dim(m)));
  }
  auto links = links_path.empty() ? cplink::CannotLinkMatrix::empty(x.dim(2), x.dim(3))
                                  : cplink::read_links(links_path);
  if (links.rows() != x.dim(2) || links.cols() != x.dim(3))
    throw cplink::validation_error(
        links_path + ": link dims " + std::to_string(links.rows()) + " " +
        std::to_string(links.cols()) + " but the tensor has " + std::to_string(x.dim(2)) +
        " " + std::to_string(x.dim(3)));

  std::vector<std::string> diag_vocab, med_vocab;
  if (!diag_vocab_path.empty())
    diag_vocab = load_mode_vocab(diag_vocab_path, "diagnosis_vocab", x.dim(2));
  if (!med_vocab_path.empty())
    med_vocab = load_mode_vocab(med_vocab_path, "medication_vocab", x.dim(3));
  if (diag_vocab.empty())
    for (cplink::Index j = 0; j < x.dim(2); ++j) diag_vocab.push_back("d" + std::to_string(j));
  if (med_vocab.empty())
    for (cplink::Index k = 0; k < x.dim(3); ++k) med_vocab.push_back("m" + std::to_string(k));

  const auto report = cplink::fit(x, links, sc);

  std::filesystem::create_directories(out_dir);
  cplink::write_model(out_dir, report.model);

  {
    auto out = cplink::detail::open_for_write(out_dir + "/trace.txt");
    out << "iter kl angular l2 cannot_link total\n";
    for (std::size_t t = 0; t < report.trace.size(); ++t) {
      const auto& b = report.trace[t];
      out << t << ' ' << cplink::fmt_double(b.kl) << ' ' << cplink::fmt_double(b.angular)
          << ' ' << cplink::fmt_double(b.l2) << ' ' << cplink::fmt_double(b.cannot_link)
          << ' ' << cplink::fmt_double(b.total) << '\n';
    }
  }

  std::vector<std::pair<std::string, std::string>> rows;
  rows.emplace_back("config_hash", cplink::content_hash(cfg.raw_text()));
  rows.emplace_back("dims", std::to_string(x.dim(1)) + " " + std::to_string(x.dim(2)) +
                                " " + std::to_string(x.dim(3)));
  rows.emplace_back("rank", std::to_string(sc.rank));
  rows.emplace_back("converged", report.converged ? "true" : "false");
  rows.emplace_back("iterations", std::to_string(report.iterations));
  rows.emplace_back("trace_final_total",
                    cplink::fmt_double(report.trace.back().total));
  std::string dead = "none";
  if (!report.degenerate_components.empty()) {
    dead.clear();
    for (std::size_t i = 0; i < report.degenerate_components.size(); ++i) {
      if (i > 0) dead += ",";
      dead += std::to_string(report.degenerate_components[i]);
    }
  }
  rows.emplace_back("degenerate_components", dead);
  append_statistics(rows, x, report.model, links, metric_tau);
  cplink::write_report(out_dir + "/fit_report.txt", rows);

  write_phenotypes(out_dir + "/phenotypes.txt", report.model, diag_vocab, med_vocab,
                   phenotype_tau, top_terms);

  if (verbose_enabled()) {
    for (std::size_t t = 0; t < report.trace.size(); ++t)
      std::cerr << "iter " << t << " total " << cplink::fmt_double(report.trace[t].total)
                << '\n';
  }
  print_report(rows);
  std::cout << "wall_seconds " << report.wall_seconds << '\n';
  return 0;
}

int run_metrics(const std::string& model_dir, const std::string& tensor_path,
                const std::string& links_path, double tau, const std::string& out_path) {
  const auto m = cplink::read_model(model_dir);
  const auto x = cplink::read_tensor(tensor_path);
  const auto dims = m.dims();
  for (int mode = 1; mode <= 3; ++mode)
    if (dims[static_cast<std::size_t>(mode - 1)] != x.dim(mode))
      throw cplink::validation_error(
          "mode " + std::to_string(mode) + " (" + mode_name(mode) + "): model has " +
          std::to_string(dims[static_cast<std::size_t>(mode - 1)]) +
          " rows but the tensor dimension is " + std::to_string(x.dim(mode)));
  const auto links = links_path.empty()
                         ? cplink::CannotLinkMatrix::empty(x.dim(2), x.dim(3))
                         : cplink::read_links(links_path);
  if (links.rows() != x.dim(2) || links.cols() != x.dim(3))
    throw cplink::validation_error(
        links_path + ": link dims " + std::to_string(links.rows()) + " " +
        std::to_string(links.cols()) + " but the tensor has " + std::to_string(x.dim(2)) +
        " " + std::to_string(x.dim(3)));

  std::vector<std::pair<std::string, std::string>> rows;
  append_statistics(rows, x, m, links, tau);
  if (!out_path.empty()) cplink::write_report(out_path, rows);
  print_report(rows);
  return 0;
}

int run_evaluate(const std::string& model_dir, const std::string& labels_path,
                 int splits, double test_fraction, int folds, std::uint64_t seed,
                 const std::string& grid_csv, const std::string& out_path) {
  const auto m = cplink::read_model(model_dir);
  const auto labels = cplink::read_labels(labels_path, m.dims()[0]);

  cplink::LabeledFeatures data;
  data.features = m.factor(1);
  data.labels = labels;

  cplink::EvalProtocol protocol;
  protocol.n_splits = splits;
  protocol.test_fraction = test_fraction;
  protocol.cv_folds = folds;
  protocol.seed = seed;
  if (!grid_csv.empty()) {
    protocol.lasso_grid.clear();
    for (const auto& tok : cplink::detail::split_csv(grid_csv))
      protocol.lasso_grid.push_back(cplink::detail::parse_double(tok, "--grid", 0));
  }

  const auto report = cplink::evaluate(data, protocol);

  std::vector<std::pair<std::string, std::string>> rows;
  rows.emplace_back("subjects", std::to_string(labels.size()));
  rows.emplace_back("features", std::to_string(m.rank()));
  rows.emplace_back("splits", std::to_string(splits));
  rows.emplace_back("mean_auc", cplink::fmt_double(report.mean_auc));
  rows.emplace_back("std_auc", cplink::fmt_double(report.std_auc));
  for (std::size_t s = 0; s < report.splits.size(); ++s) {
    rows.emplace_back("split_" + std::to_string(s) + "_auc",
                      cplink::fmt_double(report.splits[s].auc));
    rows.emplace_back("split_" + std::to_string(s) + "_penalty",
                      cplink::fmt_double(report.splits[s].penalty));
  }
  for (std::size_t w = 0; w < report.warnings.size(); ++w)
    rows.emplace_back("warning_" + std::to_string(w), report.warnings[w]);
  if (!out_path.empty()) cplink::write_report(out_path, rows);
  print_report(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"constrained nonnegative CP decomposition of count tensors"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a planted-model dataset");
  std::string synth_spec, synth_out;
  synth->add_option("--spec", synth_spec, "key=value recipe file")->required();
  synth->add_option("--out", synth_out, "output directory")->required();

  auto* links_cmd = app.add_subcommand("build-links", "derive cannot-link pairs from a corpus");
  std::string corpus_path, diag_vocab, med_vocab, undefined_policy = "exclude", links_out;
  double alpha = 1.0;
  links_cmd->add_option("--corpus", corpus_path, "one document per line")->required();
  links_cmd->add_option("--diagnosis-vocab", diag_vocab, "row vocabulary, one term per line")
      ->required();
  links_cmd->add_option("--medication-vocab", med_vocab, "column vocabulary, one term per line")
      ->required();
  links_cmd->add_option("--alpha", alpha, "lift threshold; pairs strictly below are linked");
  links_cmd->add_option("--undefined", undefined_policy,
                        "policy for pairs with a zero marginal: exclude | constrain");
  links_cmd->add_option("--out", links_out, "output pair file")->required();

  auto* decompose = app.add_subcommand("decompose", "fit the model described by a config file");
  std::string config_path;
  bool dry_run = false;
  decompose->add_option("--config", config_path, "key=value run configuration")->required();
  decompose->add_flag("--dry-run", dry_run, "validate the config without fitting");

  auto* metrics = app.add_subcommand("metrics", "statistics for a fitted model");
  std::string m_model, m_tensor, m_links, m_out;
  double m_tau = 0.01;
  metrics->add_option("--model", m_model, "model directory")->required();
  metrics->add_option("--tensor", m_tensor, "count tensor file")->required();
  metrics->add_option("--links", m_links, "cannot-link pair file");
  metrics->add_option("--tau", m_tau, "loading threshold for non-zero counts");
  metrics->add_option("--out", m_out, "also write the report here");

  auto* evaluate = app.add_subcommand("evaluate", "held-out prediction from patient loadings");
  std::string e_model, e_labels, e_grid, e_out;
  int e_splits = 5, e_folds = 10;
  double e_test_fraction = 0.2;
  std::uint64_t e_seed = 0;
  evaluate->add_option("--model", e_model, "model directory")->required();
  evaluate->add_option("--labels", e_labels, "subject label file")->required();
  evaluate->add_option("--splits", e_splits, "train/test splits");
  evaluate->add_option("--test-fraction", e_test_fraction, "held-out share per split");
  evaluate->add_option("--folds", e_folds, "cross-validation folds on the training side");
  evaluate->add_option("--seed", e_seed, "protocol seed");
  evaluate->add_option("--grid", e_grid, "comma-separated lasso penalties");
  evaluate->add_option("--out", e_out, "also write the report here");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return run_synth(synth_spec, synth_out);
    if (links_cmd->parsed())
      return run_build_links(corpus_path, diag_vocab, med_vocab, alpha, undefined_policy,
                             links_out);
    if (decompose->parsed()) return run_decompose(config_path, dry_run);
    if (metrics->parsed()) return run_metrics(m_model, m_tensor, m_links, m_tau, m_out);
    if (evaluate->parsed())
      return run_evaluate(e_model, e_labels, e_splits, e_test_fraction, e_folds, e_seed,
                          e_grid, e_out);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const cplink::solver_error& e) {
    std::cerr << "solver error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
