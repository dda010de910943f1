// Command-line front end: ingest -> features -> fit -> cv -> biomarkers,
// plus synthetic-cohort generation and coefficient-surface export. All
// behavior is driven by a key=value config file with per-flag overrides.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tdr/pipeline.hpp"
#include "tdr/version.hpp"

namespace {

int exit_code_for(tdr::ErrorCategory c) {
  switch (c) {
    case tdr::ErrorCategory::config: return 2;
    case tdr::ErrorCategory::io:
    case tdr::ErrorCategory::parse: return 3;
    case tdr::ErrorCategory::domain:
    case tdr::ErrorCategory::numeric:
    case tdr::ErrorCategory::model: return 4;
  }
  return 1;
}

struct Override {
  std::string key, value;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"time-by-distribution regression pipeline"};
  app.set_version_flag("--version", std::string("tdr ") + tdr::version);
  app.require_subcommand(1);

  std::string config_path;
  std::vector<Override> overrides;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value configuration file");
    auto opt = [&, sub](const std::string& flag, const std::string& key,
                        const std::string& help) {
      sub->add_option_function<std::string>(
          flag, [&overrides, key](const std::string& v) { overrides.push_back({key, v}); },
          help);
    };
    opt("--activity", "activity", "minute-level activity CSV");
    opt("--subjects", "subjects", "outcome/covariate CSV");
    opt("--outdir", "outdir", "output directory");
    opt("--col-subject", "col_subject", "subject id column");
    opt("--col-day", "col_day", "day index column");
    opt("--col-minute", "col_minute", "minute column");
    opt("--col-value", "col_value", "activity value column");
    opt("--col-ml", "col_ml", "medio-lateral axis column");
    opt("--col-ap", "col_ap", "antero-posterior axis column");
    opt("--col-vt", "col_vt", "vertical axis column");
    opt("--outcome-column", "outcome_column", "outcome column in the subjects file");
    opt("--epoch-width", "epoch_width", "aggregate minutes into epochs of this width");
    opt("--valid-day-threshold", "valid_day_threshold", "min observed fraction for a valid day");
    opt("--window-half-width", "window_half_width", "half-width h of the pooling window");
    opt("--stride", "stride", "stride of the time grid in minutes");
    opt("--p-levels", "p_levels", "number of quantile levels");
    opt("--lmoment-orders", "lmoment_orders", "max L-moment order");
    opt("--boundary", "boundary", "window boundary policy: truncate|wrap");
    opt("--model", "models", "comma-separated model list (m1,m2,m3,m4,sotdr_l)");
    opt("--family", "family", "outcome family: logit|identity");
    opt("--k0", "k0", "temporal basis size");
    opt("--l0", "l0", "quantile basis size");
    opt("--pve", "pve", "FPCA proportion of variance explained");
    opt("--lambda-rule", "lambda_rule", "penalty selection: cv_min|cv_1se|fixed");
    opt("--lambda-fixed", "lambda_fixed", "fixed penalty value");
    opt("--lambda-folds", "lambda_folds", "folds for penalty cross-validation");
    opt("--lambda-path-len", "lambda_path_len", "points on the penalty path");
    opt("--gel-tau", "gel_tau", "group exponential lasso shape");
    opt("--gcv-points", "gcv_points", "points on the GCV grid");
    opt("--m3-legendre", "m3_legendre", "use the Legendre (L-moment) route for m3");
    opt("--cv-folds", "cv_folds", "cross-validation folds");
    opt("--cv-repeats", "cv_repeats", "cross-validation repeats");
    opt("--cv-stratified", "cv_stratified", "stratify folds by class");
    opt("--cv-pooled-auc", "cv_pooled_auc", "pool scores across folds for AUC");
    opt("--seed", "seed", "master seed");
    opt("--synth-subjects", "synth_subjects", "synthetic cohort size");
    opt("--synth-days", "synth_days", "synthetic days per subject");
    opt("--synth-pattern", "synth_pattern", "diurnal template: flat|unimodal|bimodal");
    opt("--synth-zero-inflation", "synth_zero_inflation", "zero-minute probability");
    opt("--synth-dispersion", "synth_dispersion", "lognormal sigma");
    opt("--synth-subject-sd", "synth_subject_sd", "subject level sd (log scale)");
    opt("--synth-base-level", "synth_base_level", "baseline activity level");
    opt("--synth-effect", "synth_effect",
        "planted effect: none|scalar|temporal|distributional|td_surface|lmoment_order_r");
    opt("--synth-lmoment-order", "synth_lmoment_order", "planted L-moment order");
    opt("--synth-outcome", "synth_outcome", "synthetic outcome family");
    opt("--synth-effect-size", "synth_effect_size", "planted effect size (sd of PA term)");
    opt("--synth-noise", "synth_noise", "residual sd for identity outcomes");
  };

  std::vector<std::string> subs = {"ingest", "features", "fit",   "cv",
                                   "biomarkers", "export-surfaces", "synth"};
  for (const auto& s : subs) add_common(app.add_subcommand(s));

  CLI11_PARSE(app, argc, argv);

  std::string sub = app.get_subcommands().front()->get_name();
  try {
    tdr::PipelineConfig cfg;
    if (!config_path.empty()) cfg = tdr::load_pipeline_config(config_path);
    for (const auto& o : overrides) tdr::apply_config_entry(cfg, o.key, o.value);
    auto files = tdr::run_subcommand(cfg, sub);
    for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
    return 0;
  } catch (const tdr::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
