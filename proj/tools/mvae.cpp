// mvae: command-line front end.
//
//   mvae convert IN OUT            binary <-> PNG (direction from OUT's extension)
//   mvae corpus --out DIR          synthetic labelled corpus + manifest.tsv
//   mvae ingest DIR --label L      manifest records for a directory of PNGs
//   mvae train MANIFEST --out M    train the detector, write model + metrics
//   mvae classify --model M FILES  one label per input
//   mvae attack MANIFEST --model M --out DIR
//   mvae nopgen LENGTH             list semantic NOP sequences
//   mvae verify ADV ORIGINAL BLOCKS
//
// Shared flags may also come from a flat key=value file via --config.

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mvae/attack.hpp"
#include "mvae/corpus.hpp"
#include "mvae/detector.hpp"
#include "mvae/maskgen.hpp"
#include "mvae/nops.hpp"

namespace fs = std::filesystem;
using namespace mvae;

namespace {

struct RunConfig {
  std::size_t width = kDefaultImageWidth;
  std::size_t block_size = 8;
  std::size_t frequency = 1;
  std::string init = "naive";
  std::size_t threshold = 10;
  double C = 1.0;
  double step_size = 0.01;
  std::size_t inner_steps = 200;
  double kappa = attack::AttackConfig{}.kappa;
  double c_growth = 10.0;
  std::string restart = "from_failed_ae";
  std::size_t nop_limit = isa::kDefaultNopLimit;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  std::string out;
  std::string model;
  // training
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double split_ratio = 0.5;
  bool no_augmented_views = false;
  // corpus
  std::size_t n_per_class = 100;
  std::size_t min_instructions = corpus::SynthSpec{}.min_instructions;
  std::size_t max_instructions = corpus::SynthSpec{}.max_instructions;

  maskgen::MaskConfig mask() const {
    maskgen::MaskConfig m;
    m.block_size = block_size;
    m.frequency = frequency;
    m.width = width;
    if (init == "naive") m.init_mode = maskgen::InitMode::NaiveNops;
    else if (init == "random") m.init_mode = maskgen::InitMode::RandomNops;
    else throw InvalidArgument("--init must be naive or random");
    m.validate();
    return m;
  }

  attack::AttackConfig attack() const {
    attack::AttackConfig a;
    a.C = C;
    a.step_size = step_size;
    a.inner_steps = inner_steps;
    a.max_outer_iters = threshold;
    a.kappa = kappa;
    a.c_growth = c_growth;
    a.nop_limit = nop_limit;
    a.seed = seed;
    if (restart == "from_failed_ae") a.restart_mode = attack::RestartMode::FromFailedAe;
    else if (restart == "random_reinit") a.restart_mode = attack::RestartMode::RandomReinit;
    else throw InvalidArgument("--restart must be from_failed_ae or random_reinit");
    a.validate();
    return a;
  }
};

std::string require_out(const RunConfig& rc, const char* what) {
  if (rc.out.empty()) throw InvalidArgument(std::string("--out is required for ") + what);
  return rc.out;
}

bool is_png(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

std::string text_of(const fs::path& p) {
  const Bytes b = read_file(p);
  return std::string(b.begin(), b.end());
}

void write_text(const fs::path& p, const std::string& s) {
  write_file(p, ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_convert(const RunConfig& rc, const fs::path& in, const fs::path& out) {
  if (is_png(out) == is_png(in))
    throw InvalidArgument("convert needs exactly one .png side (binary -> png or png -> binary)");
  if (is_png(out)) {
    write_png(bytes_to_image(read_file(in), rc.width), out);
  } else {
    write_file(out, image_to_bytes(read_png(in)));
  }
  return 0;
}

int cmd_corpus(const RunConfig& rc) {
  corpus::SynthSpec spec;
  spec.seed = rc.seed;
  spec.min_instructions = rc.min_instructions;
  spec.max_instructions = rc.max_instructions;
  const auto m = corpus::generate_corpus(spec, rc.n_per_class, require_out(rc, "corpus"));
  std::cout << "wrote " << m.records.size() << " samples to " << rc.out << "/manifest.tsv\n";
  return 0;
}

int cmd_ingest(const RunConfig& rc, const fs::path& dir, const std::string& label) {
  const auto report = corpus::ingest_images(dir, corpus::parse_label(label));
  corpus::Manifest m;
  m.records = report.records;
  // Absolute paths: the manifest may live anywhere relative to the images.
  for (auto& r : m.records) r.path = fs::absolute(r.path).string();
  write_text(require_out(rc, "ingest"), corpus::format_manifest(m));
  for (const auto& [path, why] : report.failures) std::cerr << "skipped " << path << ": " << why << "\n";
  std::cout << "ingested " << report.records.size() << " images, skipped " << report.failures.size() << "\n";
  return 0;
}

int cmd_train(const RunConfig& rc, const fs::path& manifest_path) {
  const fs::path out = require_out(rc, "train");
  const auto manifest = corpus::load_manifest(manifest_path);
  const auto [train_m, val_m] = corpus::split(manifest, rc.split_ratio, rc.seed);
  corpus::ImageLoadOptions opt;
  opt.width = rc.width;
  opt.augmented_views = !rc.no_augmented_views;
  opt.mask = rc.mask();
  const auto train_set = corpus::load_images(train_m, opt);
  const auto val_set = corpus::load_images(val_m, opt);

  detector::TrainConfig tc;
  tc.epochs = rc.epochs;
  tc.batch_size = rc.batch_size;
  tc.learning_rate = rc.learning_rate;
  tc.momentum = rc.momentum;
  tc.seed = rc.seed;
  auto model = detector::Model::initialized(rc.seed);

  std::string metrics = "epoch\ttrain_acc\ttrain_loss\tval_acc\tval_loss\trecall_benign\trecall_malware\n";
  detector::train(model, train_set, val_set, tc, [&](const detector::EpochMetrics& e) {
    const std::string row = std::to_string(e.epoch) + "\t" + fixed(e.train.accuracy, 4) + "\t" +
                            fixed(e.train.loss, 6) + "\t" + fixed(e.val.accuracy, 4) + "\t" +
                            fixed(e.val.loss, 6) + "\t" + fixed(e.val.recall[0], 4) + "\t" +
                            fixed(e.val.recall[1], 4) + "\n";
    metrics += row;
    std::cerr << row;
  });
  detector::save_model(model, out);
  write_text(fs::path(out.string() + ".metrics.tsv"), metrics);
  return 0;
}

int cmd_classify(const RunConfig& rc, const std::vector<std::string>& inputs) {
  if (rc.model.empty()) throw InvalidArgument("--model is required for classify");
  const auto model = detector::load_model(rc.model);
  for (const auto& in : inputs) {
    const GrayImage img = is_png(in) ? read_png(in) : bytes_to_image(read_file(in), rc.width);
    const auto z = model.forward(normalize(img));
    std::cout << in << "\t" << detector::label_name(z.label()) << "\t" << fixed(z.probabilities()[1], 6)
              << "\n";
  }
  return 0;
}

struct SampleOutcome {
  std::string name;
  attack::AttackResult result;
  std::string error;
  int exit_code = 0;
};

int cmd_attack(const RunConfig& rc, const fs::path& manifest_path) {
  if (rc.model.empty()) throw InvalidArgument("--model is required for attack");
  const fs::path out = require_out(rc, "attack");
  const auto model = detector::load_model(rc.model);
  const auto manifest = corpus::load_manifest(manifest_path);
  const auto mask_cfg = rc.mask();
  const auto base_cfg = rc.attack();
  const auto& catalog = isa::seed_catalog();
  fs::create_directories(out);

  std::vector<const corpus::Record*> targets;
  for (const auto& r : manifest.records)
    if (r.label == detector::kMalware && r.kind == corpus::Kind::Binary) targets.push_back(&r);
  if (targets.empty()) throw ConfigError("manifest has no malware binaries to attack");

  std::vector<SampleOutcome> outcomes(targets.size());
  attack::parallel_for(targets.size(), rc.jobs, [&](std::size_t i) {
    const auto& r = *targets[i];
    auto& o = outcomes[i];
    o.name = fs::path(r.path).stem().string();
    try {
      const auto prog = corpus::load_program(manifest, r);
      auto cfg = base_cfg;
      cfg.seed = attack::sample_seed(base_cfg.seed, i);
      o.result = attack::run_attack(model, prog.code, prog.stream, mask_cfg, cfg, catalog);
      write_file(out / (o.name + ".adv.bin"), o.result.viable.bytes);
      write_text(out / (o.name + ".blocks"), maskgen::format_spans(o.result.viable.block_spans));
    } catch (const Error& e) {
      o.error = e.what();
      o.exit_code = e.exit_code();
    }
  });

  std::string report =
      "sample\tsuccess\tnoop\touter_iters\twall_ms\texpansion_rate\tfinal_cw_loss\toscillation\n";
  std::size_t ok = 0, attempted = 0;
  std::vector<std::size_t> iters;
  int first_error = 0;
  for (const auto& o : outcomes) {
    if (!o.error.empty()) {
      std::cerr << o.name << ": " << o.error << "\n";
      if (!first_error) first_error = o.exit_code;
      continue;
    }
    const auto& r = o.result;
    ++attempted;
    ok += r.success;
    if (r.success && !r.noop) iters.push_back(r.outer_iters_used);
    report += o.name + "\t" + (r.success ? "1" : "0") + "\t" + (r.noop ? "1" : "0") + "\t" +
              std::to_string(r.outer_iters_used) + "\t" + fixed(r.wall_ms, 1) + "\t" +
              fixed(r.expansion_rate, 4) + "\t" + fixed(r.final_cw_loss, 6) + "\t" +
              (r.oscillation ? "1" : "0") + "\n";
  }
  write_text(out / "report.tsv", report);
  std::sort(iters.begin(), iters.end());
  std::cout << "success " << ok << "/" << attempted;
  if (!iters.empty()) std::cout << ", median outer iterations " << iters[iters.size() / 2];
  std::cout << "\n";
  return first_error;
}

int cmd_nopgen(const RunConfig& rc, std::size_t length) {
  const auto& catalog = isa::seed_catalog();
  for (const auto& s : catalog.generate_nops(length, rc.nop_limit)) {
    std::cout << isa::to_hex(s.bytes);
    const char* sep = "\t";
    for (auto k : s.parts) {
      std::cout << sep << isa::to_hex(catalog[k].bytes);
      sep = "+";
    }
    std::cout << "\n";
  }
  return 0;
}

int cmd_verify(const RunConfig& rc, const fs::path& adv_path, const fs::path& orig_path,
               const fs::path& blocks_path) {
  const Bytes adv = read_file(adv_path);
  const auto spans = maskgen::parse_spans(text_of(blocks_path), adv.size());
  const auto n = attack::verify_viable(adv, spans, read_file(orig_path), rc.nop_limit);
  std::cout << "strip-equal, " << n << " blocks listed and neutral";
  if (!rc.model.empty()) {
    const auto z = detector::load_model(rc.model).forward(normalize(bytes_to_image(adv, rc.width)));
    if (z.label() != detector::kBenign) throw VerificationFailure("detector labels the binary malware");
    std::cout << ", classified benign";
  }
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial examples against visualization-based malware detectors"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "flat key=value file; flags override it");

  RunConfig rc;
  app.add_option("--width", rc.width, "image width in pixels")->capture_default_str();
  app.add_option("--block-size", rc.block_size, "bytes per perturbation block")->capture_default_str();
  app.add_option("--frequency", rc.frequency, "one block after every k-th instruction")->capture_default_str();
  app.add_option("--init", rc.init, "block initialisation: naive or random")->capture_default_str();
  app.add_option("--threshold", rc.threshold, "maximum outer attack iterations")->capture_default_str();
  app.add_option("--C", rc.C, "initial CW trade-off constant")->capture_default_str();
  app.add_option("--step-size", rc.step_size, "CW gradient step")->capture_default_str();
  app.add_option("--inner-steps", rc.inner_steps, "CW steps per outer iteration")->capture_default_str();
  app.add_option("--kappa", rc.kappa, "CW confidence margin")->capture_default_str();
  app.add_option("--c-growth", rc.c_growth, "C multiplier after a failed iteration")->capture_default_str();
  app.add_option("--restart", rc.restart, "from_failed_ae or random_reinit")->capture_default_str();
  app.add_option("--limit", rc.nop_limit, "NOP candidates per block length")->capture_default_str();
  app.add_option("--seed", rc.seed, "PRNG seed")->capture_default_str();
  app.add_option("--jobs", rc.jobs, "samples attacked concurrently")->capture_default_str();
  app.add_option("--out", rc.out, "output path");
  app.add_option("--model", rc.model, "model file");
  app.add_option("--epochs", rc.epochs)->capture_default_str();
  app.add_option("--batch-size", rc.batch_size)->capture_default_str();
  app.add_option("--learning-rate", rc.learning_rate)->capture_default_str();
  app.add_option("--momentum", rc.momentum)->capture_default_str();
  app.add_option("--split-ratio", rc.split_ratio, "training fraction per class")->capture_default_str();
  app.add_flag("--no-augmented-views", rc.no_augmented_views, "train on raw images only");
  app.add_option("--n-per-class", rc.n_per_class)->capture_default_str();
  app.add_option("--min-instructions", rc.min_instructions)->capture_default_str();
  app.add_option("--max-instructions", rc.max_instructions)->capture_default_str();

  std::string in, out_file, manifest, label, original, blocks;
  std::vector<std::string> inputs;
  std::size_t length = 0;

  auto* convert = app.add_subcommand("convert", "binary <-> PNG");
  convert->add_option("input", in)->required();
  convert->add_option("output", out_file)->required();
  auto* corpus_cmd = app.add_subcommand("corpus", "generate a synthetic corpus");
  auto* ingest = app.add_subcommand("ingest", "manifest records for a PNG directory");
  ingest->add_option("dir", in)->required();
  ingest->add_option("--label", label)->required();
  auto* train = app.add_subcommand("train", "train the detector");
  train->add_option("manifest", manifest)->required();
  auto* classify = app.add_subcommand("classify", "label binaries or PNGs");
  classify->add_option("inputs", inputs)->required();
  auto* attack_cmd = app.add_subcommand("attack", "attack every malware binary of a manifest");
  attack_cmd->add_option("manifest", manifest)->required();
  auto* nopgen = app.add_subcommand("nopgen", "list semantic NOP sequences of a length");
  nopgen->add_option("length", length)->required();
  auto* verify = app.add_subcommand("verify", "check an adversarial binary");
  verify->add_option("adversarial", in)->required();
  verify->add_option("original", original)->required();
  verify->add_option("blocks", blocks)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version are reported as parse "errors" with code 0.
    return app.exit(e) == 0 ? 0 : static_cast<int>(ErrorCategory::InvalidArgument);
  }

  try {
    if (*convert) return cmd_convert(rc, in, out_file);
    if (*corpus_cmd) return cmd_corpus(rc);
    if (*ingest) return cmd_ingest(rc, in, label);
    if (*train) return cmd_train(rc, manifest);
    if (*classify) return cmd_classify(rc, inputs);
    if (*attack_cmd) return cmd_attack(rc, manifest);
    if (*nopgen) return cmd_nopgen(rc, length);
    if (*verify) return cmd_verify(rc, in, original, blocks);
  } catch (const Error& e) {
    std::cerr << "error (" << category_name(e.category()) << "): " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
