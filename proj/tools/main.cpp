#include <iostream>

#include "CLI11.hpp"
#include "rrwnet/cli.hpp"

namespace {

using rrwnet::cli::Options;

void add_out(CLI::App* app, Options& o) {
  app->add_option("--out", o.out, "Output directory (manifest.txt, checkpoints/, predictions/, reports/)")->required();
}

void add_seed(CLI::App* app, Options& o, const char* def) {
  app->add_option("--seed", o.seed, "Seed for every stochastic component")->default_str(def);
}

void add_training(CLI::App* app, Options& o) {
  app->add_option("--config", o.config, "Training config file (key = value)")->default_str("built-in defaults");
  app->add_option("--data", o.data, "Dataset directory")->required();
  app->add_option("--layout", o.layout, "Layout manifest overriding the directory conventions")
      ->default_str("<data>/layout.cfg if present");
  app->add_option("--variant", o.variant, "Network variant: rrwnet, rrwnet_all, unet_only, wnet, rrunet")
      ->default_str("from config (rrwnet)");
  app->add_option("--folds", o.folds, "Cross-validation folds (1 = single 80/20 holdout)")
      ->default_str("from config (4)");
  app->add_option("--max-epochs", o.max_epochs, "Epoch cap")->default_str("from config (2000)");
  add_seed(app, o, "from config (0)");
}

void add_eval(CLI::App* app, Options& o) {
  app->add_option("--paths", o.paths, "COR/INF sampled paths per image")
      ->default_str("1000 (100 for hrf and les_av)");
  app->add_option("--threshold", o.threshold, "Binarization threshold")->capture_default_str();
  app->add_flag("--curves", o.curves, "Also dump ROC/PR curve points");
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"RRWNet: retinal artery/vein segmentation with recursive refinement"};
  app.name("rrwnet");
  app.set_version_flag("--version", rrwnet::cli::kToolVersion);
  app.require_subcommand(1);
  app.get_formatter()->column_width(34);

  auto* train = app.add_subcommand("train", "Cross-validated training; writes fold checkpoints and best.ckpt");
  add_out(train, o);
  add_training(train, o);
  train->add_option("--k", o.K, "Refinement iterations K")->default_str("from config (6)");

  auto* predict = app.add_subcommand("predict", "Probability maps (16-bit PNG per channel plus RGB composite)");
  add_out(predict, o);
  predict->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  predict->add_option("--data", o.data, "Dataset directory")->required();
  predict->add_option("--layout", o.layout, "Layout manifest")->default_str("<data>/layout.cfg if present");
  predict->add_option("--split", o.split, "Which split to predict: train, test or all")->capture_default_str();
  predict->add_option("--config", o.config, "Config the checkpoint must match")->default_str("none");
  predict->add_option("--variant", o.variant, "Variant the checkpoint must match")->default_str("none");
  predict->add_option("--k", o.K, "K the checkpoint must match")->default_str("none");

  auto* refine = app.add_subcommand("refine", "Apply the refiner to external A/V maps");
  add_out(refine, o);
  refine->add_option("--checkpoint", o.checkpoint, "Model checkpoint providing the refiner")->required();
  refine->add_option("--maps", o.maps, "Directory of <id>_artery.png, <id>_vein.png [, <id>_vessel.png]")
      ->required();
  refine->add_option("--k", o.K, "Refinement iterations")->default_str("checkpoint K");
  refine->add_option("--data", o.data, "Dataset with ground truth for before/after reports")->default_str("none");
  refine->add_option("--layout", o.layout, "Layout manifest")->default_str("<data>/layout.cfg if present");
  refine->add_option("--split", o.split, "Ground-truth split: train, test or all")->capture_default_str();
  add_eval(refine, o);
  add_seed(refine, o, "0");

  auto* evaluate = app.add_subcommand("evaluate", "Metric report for a prediction directory");
  add_out(evaluate, o);
  evaluate->add_option("--predictions", o.predictions, "Prediction directory")->required();
  evaluate->add_option("--data", o.data, "Dataset directory with ground truth")->required();
  evaluate->add_option("--layout", o.layout, "Layout manifest")->default_str("<data>/layout.cfg if present");
  evaluate->add_option("--split", o.split, "Ground-truth split: train, test or all")->capture_default_str();
  add_eval(evaluate, o);
  add_seed(evaluate, o, "0");

  auto* ksearch = app.add_subcommand("ksearch", "Cross-validated comparison over refinement iterations K");
  add_out(ksearch, o);
  add_training(ksearch, o);
  ksearch->add_option("--k-list", o.k_list, "K values to compare")->delimiter(',')->capture_default_str();
  add_eval(ksearch, o);

  auto* ablate = app.add_subcommand("ablate", "Cross-validated comparison of network variants");
  add_out(ablate, o);
  add_training(ablate, o);
  ablate->add_option("--variants", o.variants, "Variants to compare")->delimiter(',')->capture_default_str();
  ablate->add_option("--k", o.K, "Refinement iterations K")->default_str("from config (6)");
  add_eval(ablate, o);

  auto* synth = app.add_subcommand("synth", "Write the synthetic A/V benchmark as a dataset directory");
  add_out(synth, o);
  synth->add_option("--train-count", o.train_count, "Training images")->capture_default_str();
  synth->add_option("--test-count", o.test_count, "Test images")->capture_default_str();
  synth->add_option("--size", o.image_size, "Image side in pixels")->capture_default_str();
  add_seed(synth, o, "0");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error code=E_USAGE exit=" << rrwnet::cli::kUsage << '\n';
    app.exit(e);
    return rrwnet::cli::kUsage;
  }
  o.command = app.get_subcommands().front()->get_name();
  return rrwnet::cli::run(o, std::cout, std::cerr);
}
