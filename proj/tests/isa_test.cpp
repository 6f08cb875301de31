#include <algorithm>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "mvae/emu.hpp"
#include "mvae/isa.hpp"
#include "mvae/nops.hpp"

using namespace mvae;
using namespace mvae::isa;

TEST(Decode, NopThenMov) {
  const auto s = decode(Bytes{0x90, 0x89, 0xc0});
  EXPECT_EQ(s.lengths(), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(s.section_len, 3u);
  EXPECT_EQ(s.instructions[1].opcode_class, OpcodeClass::MovRegReg);
}

TEST(Decode, PushfAddPopfNop) {
  const auto s = decode(Bytes{0x9c, 0x83, 0xc0, 0x00, 0x9d, 0x90});
  EXPECT_EQ(s.lengths(), (std::vector<std::size_t>{1, 3, 1, 1}));
  EXPECT_EQ(s.instructions[1].opcode_class, OpcodeClass::AluImm8);
}

TEST(Decode, EmptyIsInvalid) { EXPECT_THROW(decode(Bytes{}), InvalidArgument); }

TEST(Decode, LengthTableForEverySubsetOpcode) {
  struct Case {
    Bytes code;
    std::size_t len;
    OpcodeClass cls;
  };
  const std::vector<Case> cases = {
      {{0x90}, 1, OpcodeClass::Nop},
      {{0x89, 0xd9}, 2, OpcodeClass::MovRegReg},
      {{0x74, 0xfe}, 2, OpcodeClass::Jcc},
      {{0x53}, 1, OpcodeClass::Push},
      {{0x5f}, 1, OpcodeClass::Pop},
      {{0x9c}, 1, OpcodeClass::Pushf},
      {{0x9d}, 1, OpcodeClass::Popf},
      {{0xf7, 0xd1}, 2, OpcodeClass::Not},
      {{0xf7, 0xdb}, 2, OpcodeClass::Neg},
      {{0x83, 0xf2, 0x7f}, 3, OpcodeClass::AluImm8},
      {{0xff, 0xc6}, 2, OpcodeClass::Inc},
      {{0xff, 0xcf}, 2, OpcodeClass::Dec},
      {{0xbb, 1, 2, 3, 4}, 5, OpcodeClass::MovRegImm},
      {{0xc3}, 1, OpcodeClass::Ret},
  };
  for (const auto& c : cases) {
    const auto d = decode_one(c.code, 0);
    EXPECT_EQ(d.length, c.len) << to_hex(c.code);
    EXPECT_EQ(d.cls, c.cls) << to_hex(c.code);
  }
  EXPECT_EQ(decode_one(Bytes{0xbb, 0x78, 0x56, 0x34, 0x12}, 0).imm, 0x12345678);
  EXPECT_EQ(decode_one(Bytes{0x83, 0xc0, 0xff}, 0).imm, -1);
}

TEST(Decode, ErrorsCarryTheFailingOffset) {
  try {
    decode(Bytes{0x90, 0x90, 0x0f, 0x05});
    FAIL();
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.offset, 2u);
  }
  // memory operand, unsupported group member, truncation
  EXPECT_THROW(decode(Bytes{0x89, 0x00}), DecodeError);
  EXPECT_THROW(decode(Bytes{0xf7, 0xe0}), DecodeError);
  EXPECT_THROW(decode(Bytes{0xff, 0xd0}), DecodeError);
  try {
    decode(Bytes{0x90, 0xb8, 1, 2});
    FAIL();
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.offset, 1u);
  }
}

TEST(Boundaries, DirectTranscription) {
  const auto s = load_boundaries("0,1\n1,2\n");
  EXPECT_EQ(s.lengths(), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(s.section_len, 3u);
  EXPECT_NO_THROW(check_tiling(s, 3));
  EXPECT_THROW(check_tiling(s, 4), InvalidArgument);
}

TEST(Boundaries, ErrorsNameTheLine) {
  auto line_of = [](const char* text) -> std::size_t {
    try {
      load_boundaries(text);
    } catch (const FormatError& e) {
      return e.line;
    }
    return 0;
  };
  EXPECT_EQ(line_of("0,2\n1,1\n"), 2u);        // overlap
  EXPECT_EQ(line_of("0,1\n1,1\n0,1\n"), 3u);   // goes backwards
  EXPECT_EQ(line_of("0,1\n2,1\n"), 2u);        // gap
  EXPECT_EQ(line_of("0,1\nx,1\n"), 2u);        // junk
  EXPECT_EQ(line_of("0,0\n"), 1u);             // zero length
  EXPECT_EQ(line_of("1,1\n"), 1u);             // does not start at 0
}

TEST(Boundaries, RoundtripThroughSidecar) {
  std::mt19937_64 rng(3);
  const std::vector<Bytes> pieces = {{0x90}, {0x89, 0xc3}, {0x55}, {0x5d}, {0x83, 0xc1, 0x05},
                                     {0xb8, 9, 9, 9, 9}, {0xff, 0xc0}, {0xf7, 0xd2}, {0xc3}};
  for (int t = 0; t < 200; ++t) {
    Bytes code;
    const auto n = 1 + rng() % 50;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = pieces[rng() % pieces.size()];
      code.insert(code.end(), p.begin(), p.end());
    }
    const auto s = decode(code);
    check_tiling(s, code.size());
    EXPECT_TRUE(load_boundaries(format_boundaries(s)).same_boundaries(s));
  }
}

TEST(Hex, Roundtrip) {
  EXPECT_EQ(to_hex(Bytes{0x9c, 0x0f, 0xff}), "9c0fff");
  EXPECT_EQ(from_hex("9C0fFF"), (Bytes{0x9c, 0x0f, 0xff}));
  EXPECT_THROW(from_hex("abc"), FormatError);
  EXPECT_THROW(from_hex("zz"), FormatError);
}

// ---------------------------------------------------------------------------
// Seed catalog

TEST(SeedCatalog, HoldsTheTwelvePublishedSeeds) {
  const std::vector<std::tuple<std::string, std::size_t, SeedCategory>> table = {
      {"90", 1, SeedCategory::Misc},
      {"89c0", 2, SeedCategory::Movement},
      {"7700", 2, SeedCategory::Movement},
      {"5058", 2, SeedCategory::Movement},
      {"f7d0f7d0", 4, SeedCategory::Logical},
      {"9c83c0009d", 5, SeedCategory::Arithmetic},
      {"9c83e0ff9d", 5, SeedCategory::Logical},
      {"9c83c8009d", 5, SeedCategory::Logical},
      {"9c83f0009d", 5, SeedCategory::Logical},
      {"9cf7d8f7d89d", 6, SeedCategory::Arithmetic},
      {"9cffc0ffc89d", 6, SeedCategory::Arithmetic},
      {"9c83c00183e8019d", 8, SeedCategory::Arithmetic},
  };
  const auto& cat = seed_catalog();
  ASSERT_EQ(cat.size(), table.size());
  for (const auto& [hex, len, category] : table) {
    const auto it = std::find_if(cat.seeds().begin(), cat.seeds().end(),
                                 [&](const SemanticNopSeed& s) { return to_hex(s.bytes) == hex; });
    ASSERT_NE(it, cat.seeds().end()) << hex;
    EXPECT_EQ(it->byte_len(), len) << hex;
    EXPECT_EQ(it->category, category) << hex;
    EXPECT_NO_THROW(decode(it->bytes)) << hex;
    EXPECT_TRUE(emu::check_neutral(it->bytes, 1000).neutral) << hex;
  }
  EXPECT_TRUE(cat.prefix_free());
}

TEST(SeedCatalog, RejectsNonNeutralOrUndecodableSeeds) {
  EXPECT_THROW(SeedCatalog({{{0x50}, SeedCategory::Misc}}), VerificationFailure);  // push eax
  EXPECT_THROW(SeedCatalog({{{0xf7, 0xd0}, SeedCategory::Logical}}), VerificationFailure);  // not eax
  EXPECT_THROW(SeedCatalog({{{0x0f, 0x0b}, SeedCategory::Misc}}), VerificationFailure);
  EXPECT_THROW(SeedCatalog({{{0x90}, SeedCategory::Misc}, {{0x90}, SeedCategory::Misc}}), ConfigError);
  EXPECT_THROW(SeedCatalog({}), ConfigError);
}

TEST(SeedCatalog, ParsesTextFormat) {
  const auto seeds = parse_catalog("# comment\n90\tmisc\r\n\n5058\tmovement\n");
  ASSERT_EQ(seeds.size(), 2u);
  EXPECT_EQ(seeds[1].bytes, (Bytes{0x50, 0x58}));
  try {
    parse_catalog("90\tmisc\n90 misc\n");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line, 2u);
  }
  EXPECT_THROW(parse_catalog("90\tspooky\n"), FormatError);
  EXPECT_THROW(parse_catalog("909090909090909090\tmisc\n"), FormatError);
}

// ---------------------------------------------------------------------------
// generate_nops against a brute-force composer

namespace {

// Every concatenation of seeds with total length n, keyed by bytes, keeping
// the smallest part count. Plain recursion over the unsorted seed list.
void compose_all(const std::vector<SemanticNopSeed>& seeds, std::size_t remaining, Bytes& cur,
                 std::size_t parts, std::map<Bytes, std::size_t>& out) {
  if (remaining == 0) {
    auto [it, fresh] = out.emplace(cur, parts);
    if (!fresh) it->second = std::min(it->second, parts);
    return;
  }
  for (const auto& s : seeds) {
    if (s.byte_len() > remaining) continue;
    cur.insert(cur.end(), s.bytes.begin(), s.bytes.end());
    compose_all(seeds, remaining - s.byte_len(), cur, parts + 1, out);
    cur.resize(cur.size() - s.byte_len());
  }
}

std::vector<Bytes> brute_force(std::size_t n, std::size_t limit) {
  std::map<Bytes, std::size_t> all;
  Bytes cur;
  compose_all(seed_catalog().seeds(), n, cur, 0, all);
  std::vector<std::pair<std::size_t, Bytes>> ranked;
  for (const auto& [b, p] : all) ranked.emplace_back(p, b);
  std::sort(ranked.begin(), ranked.end());
  std::vector<Bytes> out;
  for (std::size_t i = 0; i < ranked.size() && i < limit; ++i) out.push_back(ranked[i].second);
  return out;
}

}  // namespace

TEST(GenerateNops, MatchesBruteForceUpToTwelveBytes) {
  for (std::size_t k = 1; k <= 12; ++k) {
    for (std::size_t limit : {std::size_t{1}, std::size_t{10}, kDefaultNopLimit, kUnlimited}) {
      const auto got = generate_nops(k, limit);
      const auto want = brute_force(k, limit);
      ASSERT_EQ(got.size(), want.size()) << "k=" << k << " limit=" << limit;
      for (std::size_t i = 0; i < got.size(); ++i) {
        ASSERT_EQ(got[i].bytes, want[i]) << "k=" << k << " limit=" << limit << " i=" << i;
        ASSERT_EQ(got[i].byte_len(), k);
      }
    }
  }
}

TEST(GenerateNops, KnownCounts) {
  const std::vector<std::size_t> full = {1, 4, 7, 20, 46, 116, 279, 684};
  for (std::size_t k = 1; k <= 8; ++k) EXPECT_EQ(generate_nops(k, kUnlimited).size(), full[k - 1]);
  EXPECT_EQ(generate_nops(8).size(), 256u);
}

TEST(GenerateNops, PublishedExamples) {
  const auto one = generate_nops(1, kUnlimited);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].bytes, Bytes{0x90});

  std::set<std::string> three;
  for (const auto& s : generate_nops(3, kUnlimited)) three.insert(to_hex(s.bytes));
  EXPECT_TRUE(three.count("9089c0"));
  EXPECT_TRUE(three.count("89c090"));
  EXPECT_TRUE(three.count("909090"));

  bool found = false;
  for (const auto& s : generate_nops(8)) found |= to_hex(s.bytes) == "9c83c00183e8019d";
  EXPECT_TRUE(found);
}

TEST(GenerateNops, PartsConcatenateToBytesAndSequencesDecodeAndAreNeutral) {
  const auto& cat = seed_catalog();
  for (std::size_t k : {1u, 5u, 8u}) {
    std::set<Bytes> distinct;
    for (const auto& s : generate_nops(k, kUnlimited)) {
      Bytes cat_bytes;
      for (auto p : s.parts) cat_bytes.insert(cat_bytes.end(), cat[p].bytes.begin(), cat[p].bytes.end());
      ASSERT_EQ(cat_bytes, s.bytes);
      ASSERT_TRUE(distinct.insert(s.bytes).second);
      ASSERT_NO_THROW(decode(s.bytes));
      ASSERT_TRUE(emu::check_neutral(s.bytes, 100).neutral) << to_hex(s.bytes);
      const auto d = cat.decompose(s.bytes);
      ASSERT_TRUE(d.has_value());
      EXPECT_EQ(*d, s.parts);
    }
  }
}

TEST(GenerateNops, EdgeCases) {
  EXPECT_THROW(generate_nops(0), InvalidArgument);
  EXPECT_TRUE(generate_nops(8, 0).empty());
  // A catalog of 2-byte seeds cannot fill odd lengths.
  const SeedCatalog even({{{0x89, 0xc0}, SeedCategory::Movement}, {{0x50, 0x58}, SeedCategory::Movement}});
  EXPECT_TRUE(even.generate_nops(3).empty());
  EXPECT_EQ(even.generate_nops(4).size(), 4u);
  EXPECT_FALSE(seed_catalog().decompose(Bytes{0x90, 0x50}).has_value());
}
