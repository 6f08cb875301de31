#pragma once

// Semantic NOP seeds and their composition into longer sequences.
//
// The catalog is plain text, one seed per line: "hexbytes<TAB>category".
// Every seed is run through the emulator before it is admitted. Sequences of
// a requested length are concatenations of seeds, listed in a canonical
// order: fewer parts first, then lexicographic on bytes.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mvae/emu.hpp"
#include "mvae/isa.hpp"

namespace mvae::isa {

enum class SeedCategory : std::uint8_t { Arithmetic, Movement, Logical, Misc };

inline const char* category_name(SeedCategory c) {
  switch (c) {
    case SeedCategory::Arithmetic: return "arithmetic";
    case SeedCategory::Movement: return "movement";
    case SeedCategory::Logical: return "logical";
    case SeedCategory::Misc: return "misc";
  }
  return "?";
}

inline SeedCategory parse_category(std::string_view s) {
  if (s == "arithmetic") return SeedCategory::Arithmetic;
  if (s == "movement") return SeedCategory::Movement;
  if (s == "logical") return SeedCategory::Logical;
  if (s == "misc") return SeedCategory::Misc;
  throw FormatError("unknown seed category '" + std::string(s) + "'");
}

inline constexpr std::size_t kMinSeedLen = 1;
inline constexpr std::size_t kMaxSeedLen = 8;

struct SemanticNopSeed {
  Bytes bytes;
  SeedCategory category = SeedCategory::Misc;

  std::size_t byte_len() const noexcept { return bytes.size(); }
};

struct NopSequence {
  Bytes bytes;
  std::vector<std::size_t> parts;  // indices into the catalog

  std::size_t byte_len() const noexcept { return bytes.size(); }
  friend bool operator==(const NopSequence&, const NopSequence&) = default;
};

// The twelve published seeds.
inline constexpr std::string_view kDefaultCatalogText =
    "# hex\tcategory\n"
    "90\tmisc\n"
    "89c0\tmovement\n"
    "7700\tmovement\n"
    "5058\tmovement\n"
    "f7d0f7d0\tlogical\n"
    "9c83c0009d\tarithmetic\n"
    "9c83e0ff9d\tlogical\n"
    "9c83c8009d\tlogical\n"
    "9c83f0009d\tlogical\n"
    "9cf7d8f7d89d\tarithmetic\n"
    "9cffc0ffc89d\tarithmetic\n"
    "9c83c00183e8019d\tarithmetic\n";

inline std::vector<SemanticNopSeed> parse_catalog(std::string_view text) {
  std::vector<SemanticNopSeed> seeds;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw FormatError("expected \"hex<TAB>category\"", line_no);
    SemanticNopSeed s;
    try {
      s.bytes = from_hex(line.substr(0, tab));
      s.category = parse_category(line.substr(tab + 1));
    } catch (const FormatError& e) {
      throw FormatError(e.what(), line_no);
    }
    if (s.byte_len() < kMinSeedLen || s.byte_len() > kMaxSeedLen)
      throw FormatError("seed length must be 1..8 bytes", line_no);
    seeds.push_back(std::move(s));
  }
  return seeds;
}

inline constexpr std::size_t kDefaultNopLimit = 256;
inline constexpr std::size_t kUnlimited = std::numeric_limits<std::size_t>::max();

class SeedCatalog {
 public:
  // Admits every seed only after it decodes in the subset and passes the
  // emulator neutrality check; otherwise throws VerificationFailure.
  explicit SeedCatalog(std::vector<SemanticNopSeed> seeds,
                       std::size_t trials = emu::kDefaultTrials)
      : seeds_(std::move(seeds)) {
    if (seeds_.empty()) throw ConfigError("empty seed catalog");
    std::set<Bytes> seen;
    for (const auto& s : seeds_) {
      if (!seen.insert(s.bytes).second)
        throw ConfigError("duplicate seed " + to_hex(s.bytes));
      emu::NeutralityResult r;
      try {
        r = emu::check_neutral(s.bytes, trials);
      } catch (const DecodeError& e) {
        throw VerificationFailure("seed " + to_hex(s.bytes) + " does not decode: " + e.what());
      }
      if (!r) throw VerificationFailure("seed " + to_hex(s.bytes) + " is not neutral: " + r.reason);
    }
    build_order();
  }

  static const SeedCatalog& builtin() {
    static const SeedCatalog catalog(parse_catalog(kDefaultCatalogText));
    return catalog;
  }

  const std::vector<SemanticNopSeed>& seeds() const noexcept { return seeds_; }
  std::size_t size() const noexcept { return seeds_.size(); }
  const SemanticNopSeed& operator[](std::size_t i) const { return seeds_[i]; }

  bool prefix_free() const noexcept { return prefix_free_; }

  // Up to `limit` distinct sequences of exactly `target_len` bytes in
  // canonical order. Empty when no composition exists.
  std::vector<NopSequence> generate_nops(std::size_t target_len,
                                         std::size_t limit = kDefaultNopLimit) const {
    if (target_len < 1) throw InvalidArgument("generate_nops: target length must be >= 1");
    std::vector<NopSequence> out;
    if (limit == 0) return out;
    const auto feasible = feasibility(target_len);
    std::set<Bytes> seen;
    const std::size_t max_parts = target_len / min_len_;
    for (std::size_t parts = 1; parts <= max_parts && out.size() < limit; ++parts) {
      if (!feasible[target_len][parts]) continue;
      std::vector<NopSequence> group;
      // With a prefix-free catalog the sorted-seed DFS already yields
      // lexicographic order, so the group can stop early.
      const std::size_t cap = prefix_free_ ? limit - out.size() : kUnlimited;
      NopSequence cur;
      enumerate(target_len, parts, feasible, cur, group, seen, cap);
      if (!prefix_free_)
        std::sort(group.begin(), group.end(),
                  [](const NopSequence& a, const NopSequence& b) { return a.bytes < b.bytes; });
      for (auto& g : group) {
        if (out.size() >= limit) break;
        out.push_back(std::move(g));
      }
    }
    return out;
  }

  // Seed decomposition of `bytes`, or nullopt when it is not a concatenation
  // of catalog seeds (i.e. not a member of any generate_nops list).
  std::optional<std::vector<std::size_t>> decompose(ByteView bytes) const {
    const std::size_t n = bytes.size();
    if (n == 0) return std::nullopt;
    // best[i]: seed ending a valid parse of bytes[0, i), fewest parts.
    std::vector<std::size_t> parts(n + 1, kUnlimited), via(n + 1, kUnlimited);
    parts[0] = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (parts[i] == kUnlimited) continue;
      for (std::size_t k : order_) {
        const auto& s = seeds_[k].bytes;
        if (i + s.size() > n || !std::equal(s.begin(), s.end(), bytes.begin() + i)) continue;
        if (parts[i] + 1 < parts[i + s.size()]) {
          parts[i + s.size()] = parts[i] + 1;
          via[i + s.size()] = k;
        }
      }
    }
    if (parts[n] == kUnlimited) return std::nullopt;
    std::vector<std::size_t> out;
    for (std::size_t i = n; i > 0; i -= seeds_[via[i]].byte_len()) out.push_back(via[i]);
    std::reverse(out.begin(), out.end());
    return out;
  }

 private:
  using Feasibility = std::vector<std::vector<bool>>;

  void build_order() {
    order_.resize(seeds_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    std::sort(order_.begin(), order_.end(),
              [&](std::size_t a, std::size_t b) { return seeds_[a].bytes < seeds_[b].bytes; });
    min_len_ = kMaxSeedLen;
    for (const auto& s : seeds_) min_len_ = std::min(min_len_, s.byte_len());
    prefix_free_ = true;
    for (std::size_t a = 0; a < seeds_.size(); ++a)
      for (std::size_t b = 0; b < seeds_.size(); ++b) {
        const auto& x = seeds_[a].bytes;
        const auto& y = seeds_[b].bytes;
        if (a != b && x.size() <= y.size() && std::equal(x.begin(), x.end(), y.begin()))
          prefix_free_ = false;
      }
  }

  // f[r][j]: r bytes can be filled with exactly j seeds.
  Feasibility feasibility(std::size_t n) const {
    const std::size_t max_parts = n / min_len_;
    Feasibility f(n + 1, std::vector<bool>(max_parts + 1, false));
    f[0][0] = true;
    for (std::size_t r = 1; r <= n; ++r)
      for (std::size_t j = 1; j <= max_parts; ++j)
        for (const auto& s : seeds_)
          if (s.byte_len() <= r && f[r - s.byte_len()][j - 1]) {
            f[r][j] = true;
            break;
          }
    return f;
  }

  void enumerate(std::size_t remaining, std::size_t parts_left, const Feasibility& feasible,
                 NopSequence& cur, std::vector<NopSequence>& group, std::set<Bytes>& seen,
                 std::size_t cap) const {
    if (group.size() >= cap) return;
    if (parts_left == 0) {
      if (remaining == 0 && seen.insert(cur.bytes).second) group.push_back(cur);
      return;
    }
    for (std::size_t k : order_) {
      const auto& s = seeds_[k];
      if (s.byte_len() > remaining || !feasible[remaining - s.byte_len()][parts_left - 1])
        continue;
      cur.bytes.insert(cur.bytes.end(), s.bytes.begin(), s.bytes.end());
      cur.parts.push_back(k);
      enumerate(remaining - s.byte_len(), parts_left - 1, feasible, cur, group, seen, cap);
      cur.parts.pop_back();
      cur.bytes.resize(cur.bytes.size() - s.byte_len());
      if (group.size() >= cap) return;
    }
  }

  std::vector<SemanticNopSeed> seeds_;
  std::vector<std::size_t> order_;  // seed indices sorted by bytes
  std::size_t min_len_ = 1;
  bool prefix_free_ = true;
};

inline const SeedCatalog& seed_catalog() { return SeedCatalog::builtin(); }

inline std::vector<NopSequence> generate_nops(std::size_t target_len,
                                              std::size_t limit = kDefaultNopLimit) {
  return seed_catalog().generate_nops(target_len, limit);
}

}  // namespace mvae::isa
