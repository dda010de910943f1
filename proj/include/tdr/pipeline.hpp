#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdr/activity.hpp"
#include "tdr/csv.hpp"
#include "tdr/error.hpp"
#include "tdr/evaluate.hpp"
#include "tdr/models.hpp"
#include "tdr/synth.hpp"
#include "tdr/version.hpp"

namespace tdr {

struct PipelineConfig {
  // paths
  std::string activity_path;
  std::string subjects_path;
  std::string outdir = "out";
  // input schema
  LoadSchema schema;
  std::string outcome_column = "y";
  // preprocessing
  int epoch_width = 1;
  double valid_day_threshold = 0.8;
  // functional summaries
  double window_half_width = 5.0;
  int stride = 10;
  int p_levels = 99;
  int lmoment_orders = 4;
  Boundary boundary = Boundary::truncate;
  // models
  std::vector<ModelKind> models = {ModelKind::m1, ModelKind::m2, ModelKind::m3, ModelKind::m4,
                                   ModelKind::sotdr_l};
  FitConfig fit;
  // evaluation
  CvSpec cv;
  // synthetic data
  SynthConfig synth;
  std::uint64_t seed = 1;
};

inline std::string to_string(Boundary b) { return b == Boundary::wrap ? "wrap" : "truncate"; }
inline std::string to_string(Family f) { return f == Family::logit ? "logit" : "identity"; }
inline std::string to_string(LambdaRule r) {
  switch (r) {
    case LambdaRule::cv_min: return "cv_min";
    case LambdaRule::cv_1se: return "cv_1se";
    case LambdaRule::fixed: return "fixed";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "logit") return Family::logit;
  if (s == "identity") return Family::identity;
  fail(ErrorCategory::config, "cli", "unknown family '" + s + "'");
}

inline Boundary parse_boundary(const std::string& s) {
  if (s == "truncate") return Boundary::truncate;
  if (s == "wrap") return Boundary::wrap;
  fail(ErrorCategory::config, "cli", "unknown boundary policy '" + s + "'");
}

inline LambdaRule parse_lambda_rule(const std::string& s) {
  if (s == "cv_min") return LambdaRule::cv_min;
  if (s == "cv_1se") return LambdaRule::cv_1se;
  if (s == "fixed") return LambdaRule::fixed;
  fail(ErrorCategory::config, "cli", "unknown lambda rule '" + s + "'");
}

// Key = value configuration file; '#' comments and blank lines ignored.
inline void apply_config_entry(PipelineConfig& cfg, const std::string& key,
                               const std::string& value) {
  auto to_int = [&](const std::string& v) { return static_cast<int>(parse_long(v, key)); };
  auto to_u64 = [&](const std::string& v) {
    return static_cast<std::uint64_t>(parse_long(v, key));
  };
  if (key == "activity") cfg.activity_path = value;
  else if (key == "subjects") cfg.subjects_path = value;
  else if (key == "outdir") cfg.outdir = value;
  else if (key == "col_subject") cfg.schema.subject = value;
  else if (key == "col_day") cfg.schema.day = value;
  else if (key == "col_minute") cfg.schema.minute = value;
  else if (key == "col_value") cfg.schema.value = value;
  else if (key == "col_ml") cfg.schema.ml = value;
  else if (key == "col_ap") cfg.schema.ap = value;
  else if (key == "col_vt") cfg.schema.vt = value;
  else if (key == "outcome_column") cfg.outcome_column = value;
  else if (key == "epoch_width") cfg.epoch_width = to_int(value);
  else if (key == "valid_day_threshold") cfg.valid_day_threshold = parse_double(value, key);
  else if (key == "window_half_width") cfg.window_half_width = parse_double(value, key);
  else if (key == "stride") cfg.stride = to_int(value);
  else if (key == "p_levels") cfg.p_levels = to_int(value);
  else if (key == "lmoment_orders") {
    cfg.lmoment_orders = to_int(value);
    cfg.fit.lmoment_orders = cfg.lmoment_orders;
  } else if (key == "boundary") cfg.boundary = parse_boundary(value);
  else if (key == "models") {
    cfg.models.clear();
    std::stringstream ss(value);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) cfg.models.push_back(parse_model(tok));
    }
    if (cfg.models.empty()) fail(ErrorCategory::config, "cli", "empty model list");
  } else if (key == "family") cfg.fit.family = parse_family(value);
  else if (key == "k0") cfg.fit.k0 = to_int(value);
  else if (key == "l0") cfg.fit.l0 = to_int(value);
  else if (key == "pve") cfg.fit.pve = parse_double(value, key);
  else if (key == "lambda_rule") cfg.fit.lambda_rule = parse_lambda_rule(value);
  else if (key == "lambda_fixed") cfg.fit.lambda_fixed = parse_double(value, key);
  else if (key == "lambda_folds") cfg.fit.lambda_folds = to_int(value);
  else if (key == "lambda_path_len") cfg.fit.lambda_path_len = to_int(value);
  else if (key == "lambda_min_ratio") cfg.fit.lambda_min_ratio = parse_double(value, key);
  else if (key == "gel_tau") cfg.fit.gel_tau = parse_double(value, key);
  else if (key == "gcv_points") cfg.fit.gcv_points = to_int(value);
  else if (key == "m3_legendre") cfg.fit.m3_legendre = value == "1" || value == "true";
  else if (key == "cv_folds") cfg.cv.folds = to_int(value);
  else if (key == "cv_repeats") cfg.cv.repeats = to_int(value);
  else if (key == "cv_stratified") cfg.cv.stratified = value == "1" || value == "true";
  else if (key == "cv_pooled_auc") cfg.cv.pooled_auc = value == "1" || value == "true";
  else if (key == "seed") {
    cfg.seed = to_u64(value);
    cfg.cv.seed = cfg.seed;
    cfg.fit.seed = cfg.seed;
    cfg.synth.seed = cfg.seed;
  } else if (key == "synth_subjects") cfg.synth.n_subjects = to_int(value);
  else if (key == "synth_days") cfg.synth.n_days = to_int(value);
  else if (key == "synth_pattern") cfg.synth.pattern = parse_template(value);
  else if (key == "synth_zero_inflation") cfg.synth.zero_inflation = parse_double(value, key);
  else if (key == "synth_dispersion") cfg.synth.dispersion = parse_double(value, key);
  else if (key == "synth_subject_sd") cfg.synth.subject_sd = parse_double(value, key);
  else if (key == "synth_base_level") cfg.synth.base_level = parse_double(value, key);
  else if (key == "synth_effect") cfg.synth.effect = parse_effect(value);
  else if (key == "synth_lmoment_order") cfg.synth.lmoment_order = to_int(value);
  else if (key == "synth_outcome") cfg.synth.outcome = parse_family(value);
  else if (key == "synth_effect_size") cfg.synth.effect_size = parse_double(value, key);
  else if (key == "synth_noise") cfg.synth.noise = parse_double(value, key);
  else if (key == "synth_covariate_effect_scale")
    cfg.synth.covariate_effect_scale = parse_double(value, key);
  else fail(ErrorCategory::config, "cli", "unknown configuration key '" + key + "'");
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io, "cli", "cannot open config '" + path + "'");
  PipelineConfig cfg;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = line;
    if (auto pos = s.find('#'); pos != std::string::npos) s = s.substr(0, pos);
    auto strip = [](std::string v) {
      auto b = v.find_first_not_of(" \t\r");
      auto e = v.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
    };
    s = strip(s);
    if (s.empty()) continue;
    auto eq = s.find('=');
    if (eq == std::string::npos)
      fail(ErrorCategory::config, "cli",
           path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    apply_config_entry(cfg, strip(s.substr(0, eq)), strip(s.substr(eq + 1)));
  }
  return cfg;
}

// Resolved configuration, echoed into every run directory and hashed into
// artifact headers so outputs are traceable to the exact settings.
inline std::string config_echo(const PipelineConfig& cfg) {
  std::ostringstream o;
  o << "activity = " << cfg.activity_path << "\n";
  o << "subjects = " << cfg.subjects_path << "\n";
  o << "outdir = " << cfg.outdir << "\n";
  o << "outcome_column = " << cfg.outcome_column << "\n";
  o << "epoch_width = " << cfg.epoch_width << "\n";
  o << "valid_day_threshold = " << format_double(cfg.valid_day_threshold) << "\n";
  o << "window_half_width = " << format_double(cfg.window_half_width) << "\n";
  o << "stride = " << cfg.stride << "\n";
  o << "p_levels = " << cfg.p_levels << "\n";
  o << "lmoment_orders = " << cfg.lmoment_orders << "\n";
  o << "boundary = " << to_string(cfg.boundary) << "\n";
  o << "models = ";
  for (std::size_t i = 0; i < cfg.models.size(); ++i)
    o << (i ? "," : "") << model_name(cfg.models[i]);
  o << "\n";
  o << "family = " << to_string(cfg.fit.family) << "\n";
  o << "k0 = " << cfg.fit.k0 << "\n";
  o << "l0 = " << cfg.fit.l0 << "\n";
  o << "pve = " << format_double(cfg.fit.pve) << "\n";
  o << "lambda_rule = " << to_string(cfg.fit.lambda_rule) << "\n";
  o << "lambda_fixed = " << format_double(cfg.fit.lambda_fixed) << "\n";
  o << "lambda_folds = " << cfg.fit.lambda_folds << "\n";
  o << "lambda_path_len = " << cfg.fit.lambda_path_len << "\n";
  o << "lambda_min_ratio = " << format_double(cfg.fit.lambda_min_ratio) << "\n";
  o << "gel_tau = " << format_double(cfg.fit.gel_tau) << "\n";
  o << "gcv_points = " << cfg.fit.gcv_points << "\n";
  o << "m3_legendre = " << (cfg.fit.m3_legendre ? 1 : 0) << "\n";
  o << "cv_folds = " << cfg.cv.folds << "\n";
  o << "cv_repeats = " << cfg.cv.repeats << "\n";
  o << "cv_stratified = " << (cfg.cv.stratified ? 1 : 0) << "\n";
  o << "cv_pooled_auc = " << (cfg.cv.pooled_auc ? 1 : 0) << "\n";
  o << "seed = " << cfg.seed << "\n";
  o << "synth_subjects = " << cfg.synth.n_subjects << "\n";
  o << "synth_days = " << cfg.synth.n_days << "\n";
  o << "synth_pattern = " << to_string(cfg.synth.pattern) << "\n";
  o << "synth_zero_inflation = " << format_double(cfg.synth.zero_inflation) << "\n";
  o << "synth_dispersion = " << format_double(cfg.synth.dispersion) << "\n";
  o << "synth_subject_sd = " << format_double(cfg.synth.subject_sd) << "\n";
  o << "synth_base_level = " << format_double(cfg.synth.base_level) << "\n";
  o << "synth_effect = " << to_string(cfg.synth.effect) << "\n";
  o << "synth_lmoment_order = " << cfg.synth.lmoment_order << "\n";
  o << "synth_outcome = " << to_string(cfg.synth.outcome) << "\n";
  o << "synth_effect_size = " << format_double(cfg.synth.effect_size) << "\n";
  o << "synth_noise = " << format_double(cfg.synth.noise) << "\n";
  o << "synth_covariate_effect_scale = " << format_double(cfg.synth.covariate_effect_scale)
    << "\n";
  return o.str();
}

inline std::uint64_t fnv1a_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

// Provenance lines placed at the top of every artifact file.
inline std::vector<std::string> provenance(const PipelineConfig& cfg) {
  return {std::string("tool_version=tdr ") + version,
          "config_hash=" + hex64(fnv1a_hash(config_echo(cfg))),
          "seed=" + std::to_string(cfg.seed)};
}

// Tracks files created by a stage; on failure every partial output is
// removed before the error propagates.
class ArtifactSet {
 public:
  explicit ArtifactSet(const std::string& outdir) : outdir_(outdir) {
    std::filesystem::create_directories(outdir);
  }
  std::string path(const std::string& name) {
    std::string p = outdir_ + "/" + name;
    created_.push_back(p);
    return p;
  }
  void discard_all() {
    for (const auto& p : created_) {
      std::error_code ec;
      std::filesystem::remove(p, ec);
    }
  }
  const std::vector<std::string>& files() const { return created_; }

 private:
  std::string outdir_;
  std::vector<std::string> created_;
};

namespace pipeline_detail {

struct LoadedData {
  ActivityPanel panel;
  SubjectData subjects;
  Eigen::MatrixXd z;
  Eigen::VectorXd y;
};

inline LoadedData load_inputs(const PipelineConfig& cfg) {
  LoadedData d;
  if (cfg.activity_path.empty())
    fail(ErrorCategory::config, "cli", "no activity file configured");
  d.panel = load_minutes(cfg.activity_path, cfg.schema, cfg.valid_day_threshold);
  if (cfg.epoch_width > 1) d.panel = aggregate_epochs(d.panel, cfg.epoch_width);
  if (cfg.subjects_path.empty()) return d;
  d.subjects = load_subject_records(cfg.subjects_path, cfg.outcome_column);
  // align records with the panel order
  const int n = static_cast<int>(d.panel.subjects.size());
  d.z.resize(n, static_cast<Eigen::Index>(d.subjects.covariate_names.size()));
  d.y.resize(n);
  for (int i = 0; i < n; ++i) {
    const std::string& id = d.panel.subjects[static_cast<std::size_t>(i)].subject_id;
    const SubjectRecord* rec = nullptr;
    for (const auto& r : d.subjects.records)
      if (r.subject_id == id) {
        rec = &r;
        break;
      }
    if (!rec) fail(ErrorCategory::config, "cli", "no outcome record for subject " + id);
    d.y(i) = rec->outcome;
    for (std::size_t c = 0; c < rec->covariates.size(); ++c)
      d.z(i, static_cast<Eigen::Index>(c)) = rec->covariates[c];
  }
  if (cfg.fit.family == Family::logit)
    for (int i = 0; i < n; ++i)
      if (d.y(i) != 0.0 && d.y(i) != 1.0)
        fail(ErrorCategory::config, "cli", "binary outcomes must be coded {0,1}");
  return d;
}

inline FeatureBundle features_of(const PipelineConfig& cfg, const ActivityPanel& panel) {
  return build_features(panel, default_t_grid(cfg.stride), quantile_levels(cfg.p_levels),
                        cfg.window_half_width, cfg.lmoment_orders, cfg.boundary);
}

inline void write_config_echo(const PipelineConfig& cfg, ArtifactSet& art) {
  std::ofstream out(art.path("config_resolved.txt"), std::ios::binary);
  out << "# tool_version=tdr " << version << "\n";
  out << config_echo(cfg);
}

inline void write_fit_artifacts(const PipelineConfig& cfg, const ModelFit& fit, ArtifactSet& art,
                                const std::vector<std::string>& prov) {
  const std::string name = model_name(fit.kind);
  {
    CsvWriter w(art.path("coefficients_" + name + ".csv"));
    for (const auto& line : prov) w.comment(line);
    w.row({"term", "estimate", "se", "z", "p"});
    for (const auto& c : fit.coefficients)
      w.row({c.term, format_double(c.estimate), format_double(c.se), format_double(c.z),
             format_double(c.p)});
  }
  {
    CsvWriter w(art.path("summary_" + name + ".csv"));
    for (const auto& line : prov) w.comment(line);
    w.row({"key", "value"});
    w.row({"model", name});
    w.row({"family", to_string(fit.family)});
    w.row({"n", std::to_string(fit.n)});
    w.row({"q", std::to_string(fit.q)});
    w.row({"deviance", format_double(fit.deviance)});
    w.row({"loglik", format_double(fit.loglik)});
    w.row({"lambda", format_double(fit.lambda)});
    w.row({"selected", std::to_string(fit.selected.size())});
    w.row({"joint_functional_p", format_double(fit.joint_functional_p)});
    w.row({"degenerate", fit.degenerate ? "1" : "0"});
    w.row({"converged", fit.converged ? "1" : "0"});
    for (const auto& warn : fit.warnings) w.row({"warning", warn});
  }
  if (fit.kind == ModelKind::m2 && fit.beta_t.size() > 0) {
    CsvWriter w(art.path("beta_t_" + name + ".csv"));
    for (const auto& line : prov) w.comment(line);
    w.row({"t", "estimate", "se"});
    for (Eigen::Index i = 0; i < fit.beta_t.size(); ++i)
      w.row({format_double(fit.t_grid[static_cast<std::size_t>(i)]), format_double(fit.beta_t(i)),
             format_double(fit.beta_t_se(i))});
  }
  if (fit.kind == ModelKind::m3 && fit.beta_p.size() > 0) {
    CsvWriter w(art.path("beta_p_" + name + ".csv"));
    for (const auto& line : prov) w.comment(line);
    w.row({"p", "estimate", "se"});
    for (Eigen::Index i = 0; i < fit.beta_p.size(); ++i)
      w.row({format_double(fit.p_grid[static_cast<std::size_t>(i)]), format_double(fit.beta_p(i)),
             format_double(fit.beta_p_se(i))});
  }
  if (fit.kind == ModelKind::m4 && fit.beta_surface.size() > 0) {
    CsvWriter w(art.path("beta_surface_" + name + ".csv"));
    for (const auto& line : prov) w.comment(line);
    w.row({"t", "p", "estimate"});
    for (Eigen::Index a = 0; a < fit.beta_surface.rows(); ++a)
      for (Eigen::Index b = 0; b < fit.beta_surface.cols(); ++b)
        w.row({format_double(fit.t_grid[static_cast<std::size_t>(a)]),
               format_double(fit.p_grid[static_cast<std::size_t>(b)]),
               format_double(fit.beta_surface(a, b))});
  }
  if (fit.kind == ModelKind::sotdr_l && fit.beta_star.size() > 0) {
    CsvWriter w(art.path("beta_star_" + name + ".csv"));
    for (const auto& line : prov) w.comment(line);
    w.row({"order", "t", "estimate"});
    for (Eigen::Index r = 0; r < fit.beta_star.rows(); ++r)
      for (Eigen::Index i = 0; i < fit.beta_star.cols(); ++i)
        w.row({std::to_string(r + 1), format_double(fit.t_grid[static_cast<std::size_t>(i)]),
               format_double(fit.beta_star(r, i))});
  }
}

}  // namespace pipeline_detail

// ---------------------------------------------------------------------------
// Pipeline stages. Each returns the artifact paths it produced; on failure
// partial outputs are removed and the error is rethrown.
// ---------------------------------------------------------------------------

template <typename Fn>
inline std::vector<std::string> run_stage(const PipelineConfig& cfg, Fn&& body) {
  ArtifactSet art(cfg.outdir);
  try {
    body(art);
  } catch (...) {
    art.discard_all();
    throw;
  }
  return art.files();
}

inline std::vector<std::string> run_ingest(const PipelineConfig& cfg) {
  return run_stage(cfg, [&](ArtifactSet& art) {
    auto prov = provenance(cfg);
    auto data = pipeline_detail::load_inputs(cfg);
    write_panel_csv(art.path("activity_canonical.csv"), data.panel, prov);
    pipeline_detail::write_config_echo(cfg, art);
  });
}

inline std::vector<std::string> run_features(const PipelineConfig& cfg) {
  return run_stage(cfg, [&](ArtifactSet& art) {
    auto prov = provenance(cfg);
    auto data = pipeline_detail::load_inputs(cfg);
    FeatureBundle fb = pipeline_detail::features_of(cfg, data.panel);
    {
      CsvWriter w(art.path("td_surfaces.csv"));
      for (const auto& line : prov) w.comment(line);
      w.row({"subject_id", "t", "p", "value"});
      for (int i = 0; i < fb.n(); ++i)
        for (std::size_t a = 0; a < fb.t_grid.size(); ++a)
          for (std::size_t b = 0; b < fb.p_grid.size(); ++b)
            w.row({fb.ids[static_cast<std::size_t>(i)], format_double(fb.t_grid[a]),
                   format_double(fb.p_grid[b]),
                   format_double(fb.surfaces[static_cast<std::size_t>(i)](
                       static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)))});
    }
    {
      CsvWriter w(art.path("lmoment_curves.csv"));
      for (const auto& line : prov) w.comment(line);
      w.row({"subject_id", "t", "order", "value"});
      for (int i = 0; i < fb.n(); ++i)
        for (int r = 0; r < fb.max_order; ++r)
          for (std::size_t a = 0; a < fb.t_grid.size(); ++a)
            w.row({fb.ids[static_cast<std::size_t>(i)], format_double(fb.t_grid[a]),
                   std::to_string(r + 1),
                   format_double(fb.lmom[static_cast<std::size_t>(i)](
                       r, static_cast<Eigen::Index>(a)))});
    }
    {
      CsvWriter w(art.path("quantile_functions.csv"));
      for (const auto& line : prov) w.comment(line);
      w.row({"subject_id", "p", "value"});
      for (int i = 0; i < fb.n(); ++i)
        for (std::size_t b = 0; b < fb.p_grid.size(); ++b)
          w.row({fb.ids[static_cast<std::size_t>(i)], format_double(fb.p_grid[b]),
                 format_double(fb.qfun(i, static_cast<Eigen::Index>(b)))});
    }
    {
      CsvWriter w(art.path("diurnal_curves.csv"));
      for (const auto& line : prov) w.comment(line);
      w.row({"subject_id", "t", "value"});
      for (int i = 0; i < fb.n(); ++i)
        for (std::size_t a = 0; a < fb.t_grid.size(); ++a)
          w.row({fb.ids[static_cast<std::size_t>(i)], format_double(fb.t_grid[a]),
                 format_double(fb.mean_curves(i, static_cast<Eigen::Index>(a)))});
    }
    {
      CsvWriter w(art.path("subject_means.csv"));
      for (const auto& line : prov) w.comment(line);
      w.row({"subject_id", "mean"});
      for (int i = 0; i < fb.n(); ++i)
        w.row({fb.ids[static_cast<std::size_t>(i)], format_double(fb.means(i))});
    }
    pipeline_detail::write_config_echo(cfg, art);
  });
}

inline std::vector<std::string> run_fit(const PipelineConfig& cfg) {
  return run_stage(cfg, [&](ArtifactSet& art) {
    auto prov = provenance(cfg);
    auto data = pipeline_detail::load_inputs(cfg);
    if (data.y.size() == 0) fail(ErrorCategory::config, "cli", "fit requires a subjects file");
    FeatureBundle fb = pipeline_detail::features_of(cfg, data.panel);
    ModelDesigns des = build_designs(fb, cfg.fit);
    for (ModelKind k : cfg.models) {
      ModelFit fit = fit_model(k, fb, des, data.z, data.y, cfg.fit);
      pipeline_detail::write_fit_artifacts(cfg, fit, art, prov);
    }
    pipeline_detail::write_config_echo(cfg, art);
  });
}

inline std::vector<std::string> run_cv(const PipelineConfig& cfg) {
  return run_stage(cfg, [&](ArtifactSet& art) {
    auto prov = provenance(cfg);
    auto data = pipeline_detail::load_inputs(cfg);
    if (data.y.size() == 0) fail(ErrorCategory::config, "cli", "cv requires a subjects file");
    FeatureBundle fb = pipeline_detail::features_of(cfg, data.panel);
    ModelDesigns des = build_designs(fb, cfg.fit);
    CsvWriter w(art.path("cv_metrics.csv"));
    for (const auto& line : prov) w.comment(line);
    w.row({"model", "repeat", "metric"});
    CsvWriter s(art.path("cv_summary.csv"));
    for (const auto& line : prov) s.comment(line);
    s.row({"model", "metric_mean", "metric_sd", "folds", "repeats"});
    for (ModelKind k : cfg.models) {
      CvResult r = cv_metric(k, fb, des, data.z, data.y, cfg.fit, cfg.cv);
      double sd = 0.0;
      for (double v : r.per_repeat) sd += (v - r.mean) * (v - r.mean);
      sd = r.per_repeat.size() > 1 ? std::sqrt(sd / (static_cast<double>(r.per_repeat.size()) - 1))
                                   : 0.0;
      for (std::size_t i = 0; i < r.per_repeat.size(); ++i)
        w.row({model_name(k), std::to_string(i + 1), format_double(r.per_repeat[i])});
      s.row({model_name(k), format_double(r.mean), format_double(sd),
             std::to_string(cfg.cv.folds), std::to_string(cfg.cv.repeats)});
    }
    pipeline_detail::write_config_echo(cfg, art);
  });
}

inline std::vector<std::string> run_biomarkers(const PipelineConfig& cfg) {
  return run_stage(cfg, [&](ArtifactSet& art) {
    auto prov = provenance(cfg);
    auto data = pipeline_detail::load_inputs(cfg);
    if (data.y.size() == 0)
      fail(ErrorCategory::config, "cli", "biomarkers requires a subjects file");
    FeatureBundle fb = pipeline_detail::features_of(cfg, data.panel);
    ModelDesigns des = build_designs(fb, cfg.fit);
    std::map<ModelKind, ModelFit> fits;
    for (ModelKind k : {ModelKind::m1, ModelKind::m2, ModelKind::m3, ModelKind::m4})
      fits[k] = fit_model(k, fb, des, data.z, data.y, cfg.fit);
    BiomarkerTable t = biomarker_scores(fits, fb, des);
    CsvWriter w(art.path("biomarkers.csv"));
    for (const auto& line : prov) w.comment(line);
    w.row({"subject_id", "bm_a", "bm_T", "bm_D", "bm_TD"});
    for (std::size_t i = 0; i < t.ids.size(); ++i)
      w.row({t.ids[i], format_double(t.bm_a(static_cast<Eigen::Index>(i))),
             format_double(t.bm_t(static_cast<Eigen::Index>(i))),
             format_double(t.bm_d(static_cast<Eigen::Index>(i))),
             format_double(t.bm_td(static_cast<Eigen::Index>(i)))});
    pipeline_detail::write_config_echo(cfg, art);
  });
}

inline std::vector<std::string> run_export_surfaces(const PipelineConfig& cfg) {
  return run_stage(cfg, [&](ArtifactSet& art) {
    auto prov = provenance(cfg);
    auto data = pipeline_detail::load_inputs(cfg);
    if (data.y.size() == 0)
      fail(ErrorCategory::config, "cli", "export-surfaces requires a subjects file");
    FeatureBundle fb = pipeline_detail::features_of(cfg, data.panel);
    ModelDesigns des = build_designs(fb, cfg.fit);
    for (ModelKind k : cfg.models) {
      ModelFit fit = fit_model(k, fb, des, data.z, data.y, cfg.fit);
      pipeline_detail::write_fit_artifacts(cfg, fit, art, prov);
    }
    pipeline_detail::write_config_echo(cfg, art);
  });
}

inline std::vector<std::string> run_synth(const PipelineConfig& cfg) {
  return run_stage(cfg, [&](ArtifactSet& art) {
    auto prov = provenance(cfg);
    SynthOutput syn = generate(cfg.synth);
    write_panel_csv(art.path("activity.csv"), syn.panel, prov);
    {
      CsvWriter w(art.path("subjects.csv"));
      for (const auto& line : prov) w.comment(line);
      std::vector<std::string> header = {"subject_id", "y"};
      for (const auto& c : syn.covariate_names) header.push_back(c);
      w.row(header);
      for (const auto& r : syn.records) {
        std::vector<std::string> row = {r.subject_id, format_double(r.outcome)};
        for (double c : r.covariates) row.push_back(format_double(c));
        w.row(row);
      }
    }
    {
      nlohmann::json j;
      j["effect"] = to_string(syn.truth.effect);
      j["lmoment_order"] = syn.truth.lmoment_order;
      j["scale"] = syn.truth.scale;
      j["beta_scalar"] = syn.truth.beta_scalar;
      j["t_grid"] = syn.truth.t_grid;
      j["p_grid"] = syn.truth.p_grid;
      auto vec = [](const Eigen::VectorXd& v) {
        return std::vector<double>(v.data(), v.data() + v.size());
      };
      j["eta_pa"] = vec(syn.truth.eta_pa);
      j["eta_total"] = vec(syn.truth.eta_total);
      if (syn.truth.beta_t.size() > 0) j["beta_t"] = vec(syn.truth.beta_t);
      if (syn.truth.beta_p.size() > 0) j["beta_p"] = vec(syn.truth.beta_p);
      if (syn.truth.beta_lmom_t.size() > 0) j["beta_lmom_t"] = vec(syn.truth.beta_lmom_t);
      if (syn.truth.beta_surface.size() > 0) {
        std::vector<std::vector<double>> m;
        for (Eigen::Index r = 0; r < syn.truth.beta_surface.rows(); ++r) {
          std::vector<double> row(static_cast<std::size_t>(syn.truth.beta_surface.cols()));
          for (Eigen::Index c = 0; c < syn.truth.beta_surface.cols(); ++c)
            row[static_cast<std::size_t>(c)] = syn.truth.beta_surface(r, c);
          m.push_back(std::move(row));
        }
        j["beta_surface"] = m;
      }
      std::ofstream out(art.path("truth.json"), std::ios::binary);
      out << "{\"provenance\": {\"tool_version\": \"tdr " << version
          << "\", \"config_hash\": \"" << hex64(fnv1a_hash(config_echo(cfg)))
          << "\", \"seed\": " << cfg.seed << "},\n\"truth\": " << j.dump(1) << "}\n";
    }
    pipeline_detail::write_config_echo(cfg, art);
  });
}

inline std::vector<std::string> run_subcommand(const PipelineConfig& cfg,
                                               const std::string& sub) {
  if (sub == "ingest") return run_ingest(cfg);
  if (sub == "features") return run_features(cfg);
  if (sub == "fit") return run_fit(cfg);
  if (sub == "cv") return run_cv(cfg);
  if (sub == "biomarkers") return run_biomarkers(cfg);
  if (sub == "export-surfaces") return run_export_surfaces(cfg);
  if (sub == "synth") return run_synth(cfg);
  fail(ErrorCategory::config, "cli", "unknown subcommand '" + sub + "'");
}

}  // namespace tdr
