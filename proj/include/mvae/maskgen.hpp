#pragma once

// Inserts fixed-size perturbation blocks after instructions of a code
// section, then renders the augmented section as an image together with the
// perturbation mask (1 exactly on pixels that hold inserted bytes).

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvae/binimg.hpp"
#include "mvae/isa.hpp"
#include "mvae/nops.hpp"

namespace mvae::maskgen {

enum class InitMode : std::uint8_t { NaiveNops, RandomNops };

struct MaskConfig {
  std::size_t block_size = 8;
  std::size_t frequency = 1;  // one block after every k-th instruction
  InitMode init_mode = InitMode::NaiveNops;
  std::size_t width = kDefaultImageWidth;

  void validate() const {
    if (block_size < 1) throw InvalidArgument("block_size must be >= 1");
    if (frequency < 1) throw InvalidArgument("frequency must be >= 1");
    if (width < 1) throw InvalidArgument("image width must be >= 1");
  }
};

struct Span {
  std::size_t offset = 0;
  std::size_t length = 0;
  friend bool operator==(const Span&, const Span&) = default;
};

struct AugmentedBinary {
  Bytes bytes;
  std::vector<Span> block_spans;
  // origin_map[i]: augmented offset of original instruction i.
  std::vector<std::size_t> origin_map;
  std::size_t original_len = 0;

  std::size_t inserted_bytes() const {
    std::size_t n = 0;
    for (const auto& s : block_spans) n += s.length;
    return n;
  }

  double expansion_rate() const {
    return original_len ? static_cast<double>(inserted_bytes()) / static_cast<double>(original_len)
                        : 0.0;
  }

  ByteView block(std::size_t i) const {
    return ByteView(bytes).subspan(block_spans[i].offset, block_spans[i].length);
  }
};

struct PerturbationMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> bits;

  std::size_t ones() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
};

struct Augmented {
  AugmentedBinary binary;
  GrayImage image;
  PerturbationMask mask;
};

inline PerturbationMask make_mask(const AugmentedBinary& aug, const GrayImage& img) {
  PerturbationMask m{img.width(), img.height(), std::vector<std::uint8_t>(img.size(), 0)};
  for (const auto& s : aug.block_spans)
    for (std::size_t i = 0; i < s.length; ++i) m.bits[s.offset + i] = 1;
  return m;
}

// Rebuilds image + mask after block contents changed in place.
inline Augmented render(AugmentedBinary aug, std::size_t width) {
  GrayImage img = bytes_to_image(aug.bytes, width);
  PerturbationMask mask = make_mask(aug, img);
  return {std::move(aug), std::move(img), std::move(mask)};
}

// `candidates` is the NOP list for cfg.block_size; it decides whether the
// block size is fillable and supplies random initial blocks. Naive blocks are
// 0x90 runs.
inline Augmented augment(ByteView code, const isa::InstructionStream& stream,
                         const MaskConfig& cfg, std::span<const isa::NopSequence> candidates,
                         std::uint64_t seed = 0) {
  cfg.validate();
  if (code.empty()) throw InvalidArgument("augment: empty code section");
  isa::check_tiling(stream, code.size());
  if (candidates.empty()) throw UnfillableBlock(cfg.block_size);
  for (const auto& c : candidates)
    if (c.byte_len() != cfg.block_size)
      throw InvalidArgument("augment: candidate length differs from block size");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);

  AugmentedBinary aug;
  aug.original_len = code.size();
  const std::size_t n_blocks = stream.size() / cfg.frequency;
  aug.bytes.reserve(code.size() + n_blocks * cfg.block_size);
  aug.block_spans.reserve(n_blocks);
  aug.origin_map.reserve(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const auto& ins = stream.instructions[i];
    aug.origin_map.push_back(aug.bytes.size());
    aug.bytes.insert(aug.bytes.end(), code.begin() + static_cast<std::ptrdiff_t>(ins.offset),
                     code.begin() + static_cast<std::ptrdiff_t>(ins.offset + ins.length));
    if ((i + 1) % cfg.frequency != 0) continue;
    aug.block_spans.push_back({aug.bytes.size(), cfg.block_size});
    if (cfg.init_mode == InitMode::NaiveNops) {
      aug.bytes.insert(aug.bytes.end(), cfg.block_size, std::uint8_t{0x90});
    } else {
      const auto& seq = candidates[pick(rng)].bytes;
      aug.bytes.insert(aug.bytes.end(), seq.begin(), seq.end());
    }
  }
  return render(std::move(aug), cfg.width);
}

// Removes every block, giving back the original code section.
inline Bytes strip(const AugmentedBinary& aug) {
  Bytes out;
  out.reserve(aug.bytes.size());
  std::size_t pos = 0;
  for (const auto& s : aug.block_spans) {
    out.insert(out.end(), aug.bytes.begin() + static_cast<std::ptrdiff_t>(pos),
               aug.bytes.begin() + static_cast<std::ptrdiff_t>(s.offset));
    pos = s.offset + s.length;
  }
  out.insert(out.end(), aug.bytes.begin() + static_cast<std::ptrdiff_t>(pos), aug.bytes.end());
  return out;
}

// Block-span sidecar: "offset,length" per line, same grammar as the
// instruction boundary sidecar but spans need not tile.
inline std::string format_spans(std::span<const Span> spans) {
  std::string out;
  for (const auto& s : spans) out += std::to_string(s.offset) + "," + std::to_string(s.length) + "\n";
  return out;
}

inline std::vector<Span> parse_spans(std::string_view text, std::size_t total_len) {
  std::vector<Span> spans;
  std::size_t pos = 0, line_no = 0, end_prev = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string_view::npos) throw FormatError("expected \"offset,length\"", line_no);
    std::size_t off = 0, len = 0;
    try {
      std::size_t used = 0;
      off = std::stoull(std::string(line.substr(0, comma)), &used);
      if (used != comma) throw FormatError("bad number", line_no);
      const std::string rest(line.substr(comma + 1));
      len = std::stoull(rest, &used);
      if (used != rest.size()) throw FormatError("bad number", line_no);
    } catch (const std::logic_error&) {
      throw FormatError("bad number", line_no);
    }
    if (len == 0) throw FormatError("empty block span", line_no);
    if (off < end_prev) throw FormatError("block spans overlap or are out of order", line_no);
    if (off + len > total_len) throw FormatError("block span past end of binary", line_no);
    spans.push_back({off, len});
    end_prev = off + len;
  }
  return spans;
}

}  // namespace mvae::maskgen
