#pragma once

// Dataset handling: manifests, stratified splits, PNG ingestion and a
// synthetic generator of labelled programs in the decoder subset.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mvae/binimg.hpp"
#include "mvae/detector.hpp"
#include "mvae/isa.hpp"
#include "mvae/maskgen.hpp"

namespace mvae::corpus {

namespace fs = std::filesystem;

enum class Kind : std::uint8_t { Image, Binary };

struct Record {
  std::string path;
  int label = detector::kMalware;
  Kind kind = Kind::Binary;
  std::string sidecar;  // boundary sidecar, may be empty

  friend bool operator==(const Record&, const Record&) = default;
};

struct Manifest {
  std::vector<Record> records;
  fs::path base_dir;  // relative record paths resolve against this

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  }
  std::size_t count(int label) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [&](const Record& r) { return r.label == label; }));
  }
};

inline int parse_label(std::string_view s) {
  if (s == "benign") return detector::kBenign;
  if (s == "malware") return detector::kMalware;
  throw FormatError("unknown label '" + std::string(s) + "'");
}

inline Kind parse_kind(std::string_view s) {
  if (s == "image") return Kind::Image;
  if (s == "binary") return Kind::Binary;
  throw FormatError("unknown record kind '" + std::string(s) + "'");
}

inline const char* kind_name(Kind k) { return k == Kind::Image ? "image" : "binary"; }

// One record per line: path<TAB>label<TAB>kind<TAB>sidecar (sidecar optional).
inline std::string format_manifest(const Manifest& m) {
  std::string out;
  for (const auto& r : m.records) {
    out += r.path + "\t" + detector::label_name(r.label) + "\t" + kind_name(r.kind);
    if (!r.sidecar.empty()) out += "\t" + r.sidecar;
    out += "\n";
  }
  return out;
}

inline Manifest parse_manifest(std::string_view text, const fs::path& base_dir = {},
                               bool check_paths = true) {
  Manifest m;
  m.base_dir = base_dir;
  std::set<std::string> seen;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string_view> f;
    for (std::size_t start = 0;;) {
      const auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab == std::string_view::npos ? line.size() - start : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (f.size() < 3 || f.size() > 4) throw FormatError("expected 3 or 4 tab-separated fields", line_no);
    Record r;
    try {
      r.path = std::string(f[0]);
      r.label = parse_label(f[1]);
      r.kind = parse_kind(f[2]);
      if (f.size() == 4) r.sidecar = std::string(f[3]);
    } catch (const FormatError& e) {
      throw FormatError(e.what(), line_no);
    }
    if (r.path.empty()) throw FormatError("empty path", line_no);
    if (!seen.insert(r.path).second) throw FormatError("duplicate path " + r.path, line_no);
    if (check_paths) {
      if (!fs::exists(m.resolve(r.path))) throw FormatError("missing file " + r.path, line_no);
      if (!r.sidecar.empty() && !fs::exists(m.resolve(r.sidecar)))
        throw FormatError("missing sidecar " + r.sidecar, line_no);
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

inline Manifest load_manifest(const fs::path& path) {
  const Bytes raw = read_file(path);
  return parse_manifest(std::string_view(reinterpret_cast<const char*>(raw.data()), raw.size()),
                        path.parent_path());
}

inline void save_manifest(const Manifest& m, const fs::path& path) {
  const auto text = format_manifest(m);
  write_file(path, ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Stratified split: per class, a seeded shuffle then the first
// round(ratio * n) records go to the training side. Record order inside each
// side follows the original manifest.
inline std::pair<Manifest, Manifest> split(const Manifest& m, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("split ratio must be in (0, 1)");
  std::vector<bool> to_train(m.records.size(), false);
  std::mt19937_64 rng(seed);
  for (int label : {detector::kBenign, detector::kMalware}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m.records.size(); ++i)
      if (m.records[i].label == label) idx.push_back(i);
    if (idx.size() < 2)
      throw ConfigError(std::string("class ") + detector::label_name(label) + " has fewer than 2 samples");
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    for (std::size_t k = 0; k < n_train; ++k) to_train[idx[k]] = true;
  }
  Manifest train{{}, m.base_dir}, val{{}, m.base_dir};
  for (std::size_t i = 0; i < m.records.size(); ++i)
    (to_train[i] ? train : val).records.push_back(m.records[i]);
  return {std::move(train), std::move(val)};
}

struct IngestReport {
  std::vector<Record> records;
  std::vector<std::pair<std::string, std::string>> failures;  // path, reason
};

// Every *.png in `dir` (sorted by name). Unreadable files are reported, not fatal.
inline IngestReport ingest_images(const fs::path& dir, int label) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  if (files.empty()) throw ConfigError("no PNG files in " + dir.string());
  std::sort(files.begin(), files.end());
  IngestReport rep;
  for (const auto& f : files) {
    try {
      (void)read_png(f);
      rep.records.push_back({f.string(), label, Kind::Image, {}});
    } catch (const Error& e) {
      rep.failures.emplace_back(f.string(), e.what());
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Synthetic programs

// Instruction templates the generator draws from.
enum class Template : std::uint8_t {
  MovImmSmall,  // mov r32, imm32 with imm < 256
  MovImmFull,   // mov r32, uniform imm32
  MovRegReg,
  PushPop,      // push r; ...; pop r emitted as two instructions
  AluSmall,     // 0x83 group, imm8 in [0, 15]
  AluFull,      // 0x83 group, uniform imm8
  IncDec,
  NotNeg,
  Nop,
  kCount
};

inline constexpr std::size_t kTemplates = static_cast<std::size_t>(Template::kCount);

struct ClassProfile {
  std::array<double, kTemplates> weights{};
};

struct SynthSpec {
  std::size_t min_instructions = 300;
  std::size_t max_instructions = 900;
  std::uint64_t seed = 7;
  // Benign-like code: small immediates (many zero bytes), register moves,
  // push/pop. Malware-like code: high-entropy immediates and bit twiddling.
  ClassProfile benign{{/*MovImmSmall*/ 0.30, /*MovImmFull*/ 0.02, /*MovRegReg*/ 0.22, /*PushPop*/ 0.14,
                       /*AluSmall*/ 0.16, /*AluFull*/ 0.02, /*IncDec*/ 0.08, /*NotNeg*/ 0.02,
                       /*Nop*/ 0.04}};
  ClassProfile malware{{/*MovImmSmall*/ 0.04, /*MovImmFull*/ 0.30, /*MovRegReg*/ 0.08, /*PushPop*/ 0.06,
                        /*AluSmall*/ 0.04, /*AluFull*/ 0.30, /*IncDec*/ 0.06, /*NotNeg*/ 0.12,
                        /*Nop*/ 0.00}};

  const ClassProfile& profile(int label) const { return label == detector::kBenign ? benign : malware; }

  void validate() const {
    if (min_instructions < 2 || min_instructions > max_instructions)
      throw ConfigError("bad instruction count range");
    if (benign.weights == malware.weights) throw ConfigError("class profiles must differ");
    for (const auto* p : {&benign, &malware}) {
      double s = 0;
      for (double w : p->weights) {
        if (!(w >= 0)) throw ConfigError("negative template weight");
        s += w;
      }
      if (!(s > 0)) throw ConfigError("empty class profile");
    }
  }
};

struct Program {
  Bytes code;
  isa::InstructionStream stream;
};

// Draws a branch-free program of `n` instructions (the last one a ret), so
// inserting blocks between instructions never breaks a displacement.
template <typename Rng>
Program synth_program(Rng& rng, const ClassProfile& profile, std::size_t n) {
  std::discrete_distribution<std::size_t> pick(profile.weights.begin(), profile.weights.end());
  std::uniform_int_distribution<int> reg(0, 7), byte(0, 255), small(0, 15);
  std::uniform_int_distribution<std::uint32_t> u32;
  auto gp = [&] {  // any register but esp
    int r = reg(rng);
    return static_cast<std::uint8_t>(r == isa::ESP ? isa::EAX : r);
  };
  Bytes code;
  std::vector<std::uint8_t> open_pushes;
  std::size_t count = 0;
  auto emit = [&](std::initializer_list<std::uint8_t> b) {
    code.insert(code.end(), b);
    ++count;
  };
  while (count + 1 < n) {
    const auto t = static_cast<Template>(pick(rng));
    switch (t) {
      case Template::MovImmSmall:
        emit({static_cast<std::uint8_t>(0xb8 + gp()), static_cast<std::uint8_t>(byte(rng)), 0, 0, 0});
        break;
      case Template::MovImmFull: {
        const auto v = u32(rng);
        emit({static_cast<std::uint8_t>(0xb8 + gp()), static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
              static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)});
        break;
      }
      case Template::MovRegReg:
        emit({0x89, static_cast<std::uint8_t>(0xc0 | (gp() << 3) | gp())});
        break;
      case Template::PushPop:
        if (!open_pushes.empty() && (open_pushes.size() > 3 || byte(rng) < 128)) {
          emit({static_cast<std::uint8_t>(0x58 + open_pushes.back())});
          open_pushes.pop_back();
        } else {
          const auto r = gp();
          open_pushes.push_back(r);
          emit({static_cast<std::uint8_t>(0x50 + r)});
        }
        break;
      case Template::AluSmall:
      case Template::AluFull: {
        const bool full = t == Template::AluFull;
        const auto imm = static_cast<std::uint8_t>(full ? byte(rng) : small(rng));
        emit({0x83, static_cast<std::uint8_t>(0xc0 | ((byte(rng) & 7) << 3) | gp()), imm});
        break;
      }
      case Template::IncDec:
        emit({0xff, static_cast<std::uint8_t>(0xc0 | ((byte(rng) & 1) << 3) | gp())});
        break;
      case Template::NotNeg:
        emit({0xf7, static_cast<std::uint8_t>(0xc0 | ((2 + (byte(rng) & 1)) << 3) | gp())});
        break;
      case Template::Nop:
        emit({0x90});
        break;
      case Template::kCount:
        break;
    }
  }
  emit({0xc3});
  Program p;
  p.stream = isa::decode(code);
  p.code = std::move(code);
  return p;
}

inline std::string sample_name(int label, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04zu", detector::label_name(label), i);
  return buf;
}

// Draws one program per sample. Sample i of a class uses its own PRNG stream
// derived from (seed, label, i), so corpora of different sizes share prefixes.
inline Program synth_sample(const SynthSpec& spec, int label, std::size_t i) {
  std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(i)};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<std::size_t> len(spec.min_instructions, spec.max_instructions);
  return synth_program(rng, spec.profile(label), len(rng));
}

// Writes `n_per_class` programs per class into `out_dir` as <name>.bin plus a
// <name>.bnd boundary sidecar, and a manifest.tsv listing them.
inline Manifest generate_corpus(const SynthSpec& spec, std::size_t n_per_class, const fs::path& out_dir) {
  spec.validate();
  fs::create_directories(out_dir);
  Manifest m;
  m.base_dir = out_dir;
  for (int label : {detector::kBenign, detector::kMalware})
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const auto prog = synth_sample(spec, label, i);
      const auto name = sample_name(label, i);
      write_file(out_dir / (name + ".bin"), prog.code);
      const auto bnd = isa::format_boundaries(prog.stream);
      write_file(out_dir / (name + ".bnd"),
                 ByteView(reinterpret_cast<const std::uint8_t*>(bnd.data()), bnd.size()));
      m.records.push_back({name + ".bin", label, Kind::Binary, name + ".bnd"});
    }
  save_manifest(m, out_dir / "manifest.tsv");
  return m;
}

// Code bytes and boundaries of a binary record: the sidecar when given,
// otherwise a linear-sweep decode.
inline Program load_program(const Manifest& m, const Record& r) {
  if (r.kind != Kind::Binary) throw ConfigError(r.path + " is not a binary record");
  Program p;
  p.code = read_file(m.resolve(r.path));
  if (r.sidecar.empty()) {
    p.stream = isa::decode(p.code);
  } else {
    const Bytes text = read_file(m.resolve(r.sidecar));
    p.stream = isa::load_boundaries(std::string_view(reinterpret_cast<const char*>(text.data()), text.size()));
    isa::check_tiling(p.stream, p.code.size());
  }
  return p;
}

struct ImageLoadOptions {
  std::size_t width = kDefaultImageWidth;
  // Also emit the block-augmented rendering (naive NOP blocks) of every
  // binary record, with the same label.
  bool augmented_views = true;
  maskgen::MaskConfig mask{};
};

inline std::vector<detector::LabeledImage> load_images(const Manifest& m, const ImageLoadOptions& opt = {}) {
  std::vector<detector::LabeledImage> out;
  std::vector<isa::NopSequence> naive;
  if (opt.augmented_views) {
    // Naive blocks are 0x90 runs; the list only has to be non-empty.
    naive.push_back({Bytes(opt.mask.block_size, 0x90), {}});
  }
  for (const auto& r : m.records) {
    if (r.kind == Kind::Image) {
      out.push_back({normalize(read_png(m.resolve(r.path))), r.label, r.path});
      continue;
    }
    const auto prog = load_program(m, r);
    out.push_back({normalize(bytes_to_image(prog.code, opt.width)), r.label, r.path});
    if (opt.augmented_views) {
      auto cfg = opt.mask;
      cfg.width = opt.width;
      cfg.init_mode = maskgen::InitMode::NaiveNops;
      const auto aug = maskgen::augment(prog.code, prog.stream, cfg, naive);
      out.push_back({normalize(aug.image), r.label, r.path + "#augmented"});
    }
  }
  return out;
}

}  // namespace mvae::corpus
