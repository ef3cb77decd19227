#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "advenc/attack.hpp"
#include "advenc/config.hpp"
#include "advenc/data.hpp"
#include "advenc/defenses.hpp"
#include "advenc/encoders.hpp"
#include "advenc/error.hpp"
#include "advenc/evaluation.hpp"
#include "advenc/experiment.hpp"

namespace fs = std::filesystem;
using namespace advenc;

namespace {

struct Common {
  bool verbose = false;
};

AttackConfig config_from(const std::string& file, const std::vector<std::string>& overrides) {
  std::string text;
  if (!file.empty()) text = to_canonical_text(load_config_file(file));
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) fail(ErrorCode::kParseError, "--set expects key=value, got '" + o + "'");
    text += o.substr(0, eq) + " = " + o.substr(eq + 1) + "\n";
  }
  return parse_config_text(text);
}

void print_report(const EvalReport& r) {
  std::cout << "clean_accuracy " << r.clean_accuracy << "\nmalicious_accuracy " << r.malicious_accuracy << "\nasr "
            << r.attack_success_rate << "\nrandom_noise_asr " << r.random_noise_asr << '\n';
  for (const auto& [k, v] : r.map_table) std::cout << "map@" << k << ' ' << v << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative universal adversarial noise against frozen self-supervised encoders"};
  app.footer(
      "Environment:\n  ADVENC_CACHE_DIR  directory searched for named datasets (<dir>/datasets/<name>), "
      "default ~/.cache/advenc\n\nDataset references: synthetic:<count>:<seed>, a CIFAR-10 binary file or "
      "directory, an image-folder tree, or a cached name.");
  app.require_subcommand(1);
  Common common;
  app.add_flag("-v,--verbose", common.verbose, "Log training progress to stderr");
  const auto log = [&]() -> std::ostream* { return common.verbose ? &std::cerr : nullptr; };

  // encoder train
  auto* encoder = app.add_subcommand("encoder", "Encoder checkpoints");
  encoder->require_subcommand(1);
  auto* enc_train = encoder->add_subcommand("train", "Contrastive pre-training of the toy encoder");
  std::string enc_data, enc_out, enc_shape = "3x64x64";
  ContrastiveOptions enc_opts;
  enc_train->add_option("--data", enc_data, "Pre-training dataset reference")->required();
  enc_train->add_option("--out", enc_out, "Checkpoint directory")->required();
  enc_train->add_option("--shape", enc_shape, "Input shape CxHxW")->capture_default_str();
  enc_train->add_option("--epochs", enc_opts.epochs, "Training epochs")->capture_default_str();
  enc_train->add_option("--batch-size", enc_opts.batch_size, "Batch size")->capture_default_str();
  enc_train->add_option("--lr", enc_opts.learning_rate, "Adam learning rate")->capture_default_str();
  enc_train->add_option("--tau", enc_opts.tau, "NT-Xent temperature")->capture_default_str();
  enc_train->add_option("--seed", enc_opts.seed, "Seed")->capture_default_str();
  enc_train->add_option("--pgd-steps", enc_opts.pgd_steps, "PGD steps for adversarial views (0 = off)")
      ->capture_default_str();
  enc_train->add_option("--pgd-epsilon", enc_opts.pgd_epsilon, "PGD L-inf radius")->capture_default_str();
  enc_train->callback([&] {
    enc_opts.log = log();
    const Dataset data = resolve_dataset(enc_data, parse_image_shape(enc_shape));
    const TrainedEncoder t = train_contrastive(data, enc_opts);
    save_encoder(t.encoder, enc_out);
    std::cout << t.encoder.id() << "\nprobe_loss " << t.probe_loss_before << " -> " << t.probe_loss_after << '\n';
  });

  // attack train
  auto* attack = app.add_subcommand("attack", "Universal noise training");
  attack->require_subcommand(1);
  auto* att_train = attack->add_subcommand("train", "Train a perturbation or patch against a frozen encoder");
  std::string att_config, att_encoder, att_surrogate, att_out;
  std::vector<std::string> att_set;
  double att_cutoff = -1.0;
  att_train->add_option("--config", att_config, "Config file (key = value lines)")->check(CLI::ExistingFile);
  att_train->add_option("--set", att_set, "Override a config key, key=value (repeatable)");
  att_train->add_option("--cutoff", att_cutoff, "Low-pass cutoff fraction of the HFC filter");
  att_train->add_option("--encoder", att_encoder, "Encoder checkpoint directory")->required();
  att_train->add_option("--surrogate", att_surrogate, "Surrogate dataset reference")->required();
  att_train->add_option("--out", att_out, "Artifact directory")->required();
  att_train->callback([&] {
    AttackConfig cfg = config_from(att_config, att_set);
    if (att_cutoff >= 0.0) cfg.hfc_cutoff = att_cutoff;
    const EncoderHandle enc = load_encoder(att_encoder);
    const Dataset surrogate = resolve_dataset(att_surrogate, cfg.image_shape);
    const NoiseArtifact a = train_advencoder(validate_config(cfg), enc, surrogate, AttackOptions{{}, log()});
    save_artifact(a, att_out);
    std::cout << "loss " << a.loss_trace.front() << " -> " << a.loss_trace.back() << '\n';
  });

  // eval run
  auto* eval = app.add_subcommand("eval", "Attack evaluation");
  eval->require_subcommand(1);
  auto* eval_run = eval->add_subcommand("run", "Train a probe and measure clean accuracy, MA, ASR and mAP");
  std::string ev_artifact, ev_encoder, ev_train, ev_test, ev_out;
  EvalOptions ev_opts;
  eval_run->add_option("--artifact", ev_artifact, "Artifact directory")->required();
  eval_run->add_option("--encoder", ev_encoder, "Encoder checkpoint directory")->required();
  eval_run->add_option("--train", ev_train, "Downstream training data for the linear probe")->required();
  eval_run->add_option("--test", ev_test, "Downstream test data")->required();
  eval_run->add_option("--out", ev_out, "Run directory (must be empty or absent)")->required();
  eval_run->add_option("--setting", ev_opts.setting, "Setting label stored in the report");
  eval_run->add_option("--seed", ev_opts.seed, "Seed of the probe and random control")->capture_default_str();
  eval_run->add_option("--probe-epochs", ev_opts.probe.epochs, "Linear probe epochs")->capture_default_str();
  eval_run->add_option("--probe-lr", ev_opts.probe.learning_rate, "Linear probe learning rate")
      ->capture_default_str();
  eval_run->add_flag("--retrieval", ev_opts.retrieval, "Also compute mAP@k against the clean test set");
  eval_run->add_flag("--asr-all-samples", ev_opts.asr_over_all_samples,
                     "Use the prediction-flip rate over all samples as ASR");
  eval_run->callback([&] {
    RunWriter w(ev_out);
    const EncoderHandle enc = load_encoder(ev_encoder);
    const NoiseArtifact a = load_artifact(ev_artifact);
    Dataset train = resolve_dataset(ev_train, enc.input_shape());
    Dataset test = resolve_dataset(ev_test, enc.input_shape());
    w.add_input({"encoder", "encoder", ev_encoder, enc.weights_digest()});
    w.add_input({"train", "dataset", ev_train, dataset_digest(train)});
    w.add_input({"test", "dataset", ev_test, dataset_digest(test)});
    ev_opts.probe.seed = ev_opts.seed;
    const DownstreamHead head = train_linear_probe(enc, train, ev_opts.probe);
    const EvalReport r = evaluate_attack(a, enc, head, test, ev_opts);
    w.write_text("metrics.csv", metrics_csv({{fs::path(ev_artifact).filename().string(), r}}));
    w.finish({{"verb", "eval run"}, {"artifact", ev_artifact}, {"config_digest", a.config_digest}}, "eval-" + r.encoder_id);
    print_report(r);
  });

  // defense run
  auto* defense = app.add_subcommand("defense", "Defenses");
  defense->require_subcommand(1);
  auto* def_run = defense->add_subcommand("run", "Re-evaluate an artifact under a defense sweep");
  std::string df_kind, df_artifact, df_encoder, df_train, df_test, df_pre, df_out;
  std::vector<double> df_values;
  DefenseSpec df;
  EvalOptions df_eval;
  def_run->add_option("--kind", df_kind, "corruption | finetune | prune | adversarial_training")
      ->required()
      ->check(CLI::IsMember({"corruption", "finetune", "prune", "adversarial_training"}));
  def_run->add_option("--artifact", df_artifact, "Artifact directory")->required();
  def_run->add_option("--encoder", df_encoder, "Encoder checkpoint directory")->required();
  def_run->add_option("--out", df_out, "Run directory (must be empty or absent)")->required();
  def_run->add_option("--train", df_train, "Downstream training data")->required();
  def_run->add_option("--test", df_test, "Downstream test data")->required();
  def_run->add_option("--pretraining", df_pre, "Pre-training data (adversarial_training)");
  def_run->add_option("--values", df_values,
                      "Swept values: sigma, epochs, prune rate or PGD epsilon depending on --kind")
      ->required()
      ->delimiter(',');
  def_run->add_option("--epochs", df.epochs, "Adversarial pre-training epochs")->capture_default_str();
  def_run->add_option("--lr-body", df.lr_body, "Fine-tuning learning rate of the encoder")->capture_default_str();
  def_run->add_option("--lr-head", df.lr_head, "Fine-tuning learning rate of the head")->capture_default_str();
  def_run->add_option("--pgd-steps", df.pgd_steps, "PGD steps")->capture_default_str();
  def_run->add_option("--seed", df.seed, "Seed")->capture_default_str();
  def_run->add_option("--probe-epochs", df_eval.probe.epochs, "Linear probe epochs")->capture_default_str();
  def_run->callback([&] {
    RunWriter w(df_out);
    df.kind = parse_defense_kind(df_kind);
    const EncoderHandle enc = load_encoder(df_encoder);
    const NoiseArtifact a = load_artifact(df_artifact);
    Dataset train = resolve_dataset(df_train, enc.input_shape());
    Dataset test = resolve_dataset(df_test, enc.input_shape());
    std::optional<Dataset> pre;
    if (!df_pre.empty()) pre = resolve_dataset(df_pre, enc.input_shape());
    w.add_input({"encoder", "encoder", df_encoder, enc.weights_digest()});
    w.add_input({"train", "dataset", df_train, dataset_digest(train)});
    w.add_input({"test", "dataset", df_test, dataset_digest(test)});
    df_eval.seed = df.seed;
    df_eval.probe.seed = df.seed;
    std::optional<DownstreamHead> head;
    if (df.kind == DefenseKind::kCorruption) head = train_linear_probe(enc, train, df_eval.probe);
    DefenseInputs in{&a, &enc, head ? &*head : nullptr, &train, &test, pre ? &*pre : nullptr, df_eval};
    std::vector<MetricRow> rows;
    for (double v : df_values) {
      DefenseSpec s = df;
      switch (s.kind) {
        case DefenseKind::kCorruption: s.sigma = v; break;
        case DefenseKind::kFinetune: s.epochs = static_cast<std::size_t>(v); break;
        case DefenseKind::kPrune: s.prune_rate = v; break;
        case DefenseKind::kAdversarialTraining: s.pgd_epsilon = v; break;
      }
      rows.push_back({fs::path(df_artifact).filename().string(), run_defense(s, in)});
      std::cout << df_kind << ' ' << v << " clean " << rows.back().report.clean_accuracy << " asr "
                << rows.back().report.attack_success_rate << '\n';
    }
    w.write_text("metrics.csv", metrics_csv(rows));
    w.finish({{"verb", "defense run"}, {"kind", df_kind}, {"values", df_values}}, "defense-" + enc.id());
  });

  // report emit
  auto* report = app.add_subcommand("report", "Reports over run directories");
  report->require_subcommand(1);
  auto* rep_emit = report->add_subcommand("emit", "Render csv, markdown_table or png_curves");
  std::string rep_run, rep_format;
  rep_emit->add_option("--run", rep_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  rep_emit->add_option("--format", rep_format, "csv | markdown_table | png_curves")->required();
  rep_emit->callback([&] {
    for (const auto& f : emit_report(rep_run, parse_report_format(rep_format))) std::cout << f.path.string() << '\n';
  });

  // plan run
  auto* plan = app.add_subcommand("plan", "Experiment plans");
  plan->require_subcommand(1);
  auto* plan_run = plan->add_subcommand("run", "Validate and execute a JSON experiment plan");
  std::string plan_file, plan_out;
  plan_run->add_option("--plan", plan_file, "Plan file")->required();
  plan_run->add_option("--out", plan_out, "Run directory (must be empty or absent)")->required();
  plan_run->callback([&] {
    const RunManifest m = run_experiment(fs::path(plan_file), plan_out);
    std::cout << m.run_id << " (" << m.outputs.size() << " files, " << m.duration_seconds << " s)\n";
  });

  // config show
  auto* config = app.add_subcommand("config", "Attack configuration");
  config->require_subcommand(1);
  auto* cfg_show = config->add_subcommand("show", "Print the validated config as canonical text");
  std::string cfg_file;
  std::vector<std::string> cfg_set;
  cfg_show->add_option("--config", cfg_file, "Config file")->check(CLI::ExistingFile);
  cfg_show->add_option("--set", cfg_set, "Override a config key, key=value (repeatable)");
  cfg_show->callback([&] {
    const AttackConfig c = validate_config(config_from(cfg_file, cfg_set));
    std::cout << to_canonical_text(c) << "# sha256 " << config_digest(c) << '\n';
  });

  // data synth
  auto* data = app.add_subcommand("data", "Datasets");
  data->require_subcommand(1);
  auto* synth = data->add_subcommand("synth", "Write the procedural ten-class set as a CIFAR-10 binary file");
  std::size_t synth_count = 2000;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  synth->add_option("--count", synth_count, "Number of images")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output .bin file")->required();
  synth->callback([&] { write_cifar10_binary(make_synthetic_cifar(synth_count, synth_seed), synth_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
