#pragma once

// Miniature IA-32 state machine for the decoder subset. Its only job is to
// decide whether a byte sequence is a semantic NOP: after falling through
// the sequence, registers, flags, the stack pointer and the live stack (at
// and above the initial stack pointer) must be unchanged.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "mvae/isa.hpp"

namespace mvae::emu {

struct Flags {
  bool cf = false, zf = false, sf = false, of = false, pf = false, af = false;

  std::uint32_t to_eflags() const {
    // Bit 1 is reserved and always reads as one.
    return (cf ? 1u << 0 : 0) | (1u << 1) | (pf ? 1u << 2 : 0) | (af ? 1u << 4 : 0) |
           (zf ? 1u << 6 : 0) | (sf ? 1u << 7 : 0) | (of ? 1u << 11 : 0);
  }
  static Flags from_eflags(std::uint32_t e) {
    return {(e & 1u) != 0,        (e & (1u << 6)) != 0, (e & (1u << 7)) != 0,
            (e & (1u << 11)) != 0, (e & (1u << 2)) != 0, (e & (1u << 4)) != 0};
  }

  friend bool operator==(const Flags&, const Flags&) = default;
};

inline constexpr std::size_t kStackHalfWindow = 256;
inline constexpr std::size_t kStackWindow = 2 * kStackHalfWindow;

struct CpuState {
  std::array<std::uint32_t, 8> regs{};
  Flags flags;
  // Bytes [stack_base, stack_base + kStackWindow); the initial sp sits in the middle.
  std::uint32_t stack_base = 0;
  std::array<std::uint8_t, kStackWindow> stack_mem{};
  std::int64_t ip = 0;

  std::uint32_t sp() const { return regs[isa::ESP]; }

  friend bool operator==(const CpuState&, const CpuState&) = default;
};

namespace detail {

inline std::size_t stack_index(const CpuState& s, std::uint32_t addr) {
  const std::uint64_t lo = s.stack_base;
  if (addr < lo || std::uint64_t{addr} + 4 > lo + kStackWindow)
    throw VerificationFailure("stack access outside modeled window");
  return addr - s.stack_base;
}

inline void push32(CpuState& s, std::uint32_t v) {
  const std::uint32_t sp = s.regs[isa::ESP] - 4;
  const auto i = stack_index(s, sp);
  for (int k = 0; k < 4; ++k) s.stack_mem[i + k] = static_cast<std::uint8_t>(v >> (8 * k));
  s.regs[isa::ESP] = sp;
}

inline std::uint32_t pop32(CpuState& s) {
  const auto i = stack_index(s, s.regs[isa::ESP]);
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= std::uint32_t{s.stack_mem[i + k]} << (8 * k);
  s.regs[isa::ESP] += 4;
  return v;
}

inline void set_szp(Flags& f, std::uint32_t r) {
  f.zf = r == 0;
  f.sf = (r >> 31) != 0;
  f.pf = (std::popcount(r & 0xffu) % 2) == 0;
}

inline std::uint32_t add_flags(Flags& f, std::uint32_t a, std::uint32_t b, bool carry_in,
                               bool update_cf = true) {
  const std::uint64_t wide = std::uint64_t{a} + b + (carry_in ? 1 : 0);
  const auto r = static_cast<std::uint32_t>(wide);
  if (update_cf) f.cf = (wide >> 32) != 0;
  f.of = (((a ^ r) & (b ^ r)) >> 31) != 0;
  f.af = (((a ^ b ^ r) >> 4) & 1) != 0;
  set_szp(f, r);
  return r;
}

inline std::uint32_t sub_flags(Flags& f, std::uint32_t a, std::uint32_t b, bool borrow_in,
                               bool update_cf = true) {
  const std::uint32_t r = a - b - (borrow_in ? 1 : 0);
  if (update_cf) f.cf = std::uint64_t{a} < std::uint64_t{b} + (borrow_in ? 1 : 0);
  f.of = (((a ^ b) & (a ^ r)) >> 31) != 0;
  f.af = (((a ^ b ^ r) >> 4) & 1) != 0;
  set_szp(f, r);
  return r;
}

inline std::uint32_t logic_flags(Flags& f, std::uint32_t r) {
  f.cf = false;
  f.of = false;
  f.af = false;  // architecturally undefined; zero here
  set_szp(f, r);
  return r;
}

inline bool condition(const Flags& f, std::uint8_t cc) {
  bool r = false;
  switch (cc >> 1) {
    case 0: r = f.of; break;
    case 1: r = f.cf; break;
    case 2: r = f.zf; break;
    case 3: r = f.cf || f.zf; break;
    case 4: r = f.sf; break;
    case 5: r = f.pf; break;
    case 6: r = f.sf != f.of; break;
    case 7: r = f.zf || (f.sf != f.of); break;
  }
  return (cc & 1) ? !r : r;
}

}  // namespace detail

// Executes the single instruction at state.ip. Bytes outside the subset and
// stack window violations throw VerificationFailure.
inline CpuState step(CpuState state, ByteView code) {
  using isa::OpcodeClass;
  if (state.ip < 0 || static_cast<std::uint64_t>(state.ip) >= code.size())
    throw VerificationFailure("instruction pointer outside code");
  isa::DecodedInsn d;
  try {
    d = isa::decode_one(code, static_cast<std::size_t>(state.ip));
  } catch (const DecodeError& e) {
    throw VerificationFailure(e.what());
  }
  auto& r = state.regs;
  auto& f = state.flags;
  std::int64_t next = state.ip + d.length;

  switch (d.cls) {
    case OpcodeClass::Nop:
      break;
    case OpcodeClass::MovRegReg:
      r[d.reg] = r[d.src];
      break;
    case OpcodeClass::Jcc:
      if (detail::condition(f, d.cond)) next += d.imm;
      break;
    case OpcodeClass::Push:
      detail::push32(state, r[d.reg]);  // push esp stores the pre-decrement value
      break;
    case OpcodeClass::Pop: {
      const auto v = detail::pop32(state);
      r[d.reg] = v;
      break;
    }
    case OpcodeClass::Pushf:
      detail::push32(state, f.to_eflags());
      break;
    case OpcodeClass::Popf:
      f = Flags::from_eflags(detail::pop32(state));
      break;
    case OpcodeClass::Not:
      r[d.reg] = ~r[d.reg];
      break;
    case OpcodeClass::Neg: {
      const auto a = r[d.reg];
      r[d.reg] = detail::sub_flags(f, 0, a, false);
      break;
    }
    case OpcodeClass::AluImm8: {
      const auto a = r[d.reg];
      const auto b = static_cast<std::uint32_t>(d.imm);
      switch (d.alu) {
        case isa::AluOp::Add: r[d.reg] = detail::add_flags(f, a, b, false); break;
        case isa::AluOp::Or: r[d.reg] = detail::logic_flags(f, a | b); break;
        case isa::AluOp::Adc: r[d.reg] = detail::add_flags(f, a, b, f.cf); break;
        case isa::AluOp::Sbb: r[d.reg] = detail::sub_flags(f, a, b, f.cf); break;
        case isa::AluOp::And: r[d.reg] = detail::logic_flags(f, a & b); break;
        case isa::AluOp::Sub: r[d.reg] = detail::sub_flags(f, a, b, false); break;
        case isa::AluOp::Xor: r[d.reg] = detail::logic_flags(f, a ^ b); break;
        case isa::AluOp::Cmp: detail::sub_flags(f, a, b, false); break;
      }
      break;
    }
    case OpcodeClass::Inc:
      r[d.reg] = detail::add_flags(f, r[d.reg], 1, false, /*update_cf=*/false);
      break;
    case OpcodeClass::Dec:
      r[d.reg] = detail::sub_flags(f, r[d.reg], 1, false, /*update_cf=*/false);
      break;
    case OpcodeClass::MovRegImm:
      r[d.reg] = static_cast<std::uint32_t>(d.imm);
      break;
    case OpcodeClass::Ret:
      next = detail::pop32(state);
      break;
    case OpcodeClass::Unknown:
      throw DecodeError("no semantics for instruction", static_cast<std::size_t>(state.ip));
  }
  state.ip = next;
  return state;
}

// Uniformly random registers, flags and stack contents; sp in the middle of
// the stack window (4-byte aligned window base).
template <typename Rng>
CpuState random_state(Rng& rng) {
  CpuState s;
  std::uniform_int_distribution<std::uint32_t> u32;
  for (auto& r : s.regs) r = u32(rng);
  s.stack_base = (u32(rng) & 0x7fff'fff0u) + 0x1000u;
  s.regs[isa::ESP] = s.stack_base + static_cast<std::uint32_t>(kStackHalfWindow);
  s.flags = Flags::from_eflags(u32(rng));
  for (std::size_t i = 0; i < kStackWindow; i += 4) {
    const auto v = u32(rng);
    for (int k = 0; k < 4; ++k) s.stack_mem[i + k] = static_cast<std::uint8_t>(v >> (8 * k));
  }
  s.ip = 0;
  return s;
}

inline constexpr std::size_t kDefaultTrials = 1000;
inline constexpr std::uint64_t kDefaultTrialSeed = 0x5eed0f9e00ULL;

struct NeutralityResult {
  bool neutral = true;
  std::optional<CpuState> counterexample;  // initial state that exposed the violation
  std::string reason;

  explicit operator bool() const noexcept { return neutral; }
};

// Compares the post-state against the pre-state under the semantic NOP
// criterion. Memory below the initial sp is scratch and ignored.
inline std::optional<std::string> neutrality_violation(const CpuState& before,
                                                       const CpuState& after) {
  for (std::size_t i = 0; i < 8; ++i)
    if (before.regs[i] != after.regs[i]) return "register " + std::to_string(i) + " changed";
  if (!(before.flags == after.flags)) return "flags changed";
  if (!std::equal(before.stack_mem.begin() + kStackHalfWindow, before.stack_mem.end(),
                  after.stack_mem.begin() + kStackHalfWindow))
    return "live stack memory changed";
  return std::nullopt;
}

inline constexpr std::size_t kMaxSteps = 4096;

// Runs `seq` from ip 0 until control leaves it. Returns the final state.
inline CpuState run(CpuState s, ByteView seq) {
  std::size_t steps = 0;
  while (s.ip >= 0 && static_cast<std::uint64_t>(s.ip) < seq.size()) {
    if (++steps > kMaxSteps) throw VerificationFailure("step budget exhausted (loop?)");
    s = step(s, seq);
  }
  return s;
}

// Randomized neutrality test over `trials` initial states drawn from a PRNG
// seeded with `seed`. The linear decode must succeed (DecodeError propagates);
// faults during execution count as violations.
inline NeutralityResult check_neutral(ByteView seq, std::size_t trials = kDefaultTrials,
                                      std::uint64_t seed = kDefaultTrialSeed) {
  (void)isa::decode(seq);
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const CpuState init = random_state(rng);
    std::optional<std::string> why;
    try {
      const CpuState fin = run(init, seq);
      if (fin.ip != static_cast<std::int64_t>(seq.size()))
        why = "control left the sequence at ip " + std::to_string(fin.ip);
      else
        why = neutrality_violation(init, fin);
    } catch (const Error& e) {
      why = e.what();
    }
    if (why) return {false, init, *why};
  }
  return {true, std::nullopt, {}};
}

}  // namespace mvae::emu
