#pragma once

// Linear-sweep length decoder for a small IA-32 subset: exactly the
// encodings the semantic NOP seeds are built from, plus `mov r32, imm32` and
// `ret`. Anything else is a decode error; binaries outside the subset carry
// their instruction boundaries in a sidecar file instead.

#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mvae/binimg.hpp"
#include "mvae/error.hpp"

namespace mvae::isa {

enum class OpcodeClass : std::uint8_t {
  Unknown,  // boundaries loaded from a sidecar
  Nop,
  MovRegReg,
  Jcc,
  Push,
  Pop,
  Pushf,
  Popf,
  Not,
  Neg,
  AluImm8,  // 0x83 group
  Inc,
  Dec,
  MovRegImm,
  Ret,
};

// /digit of the 0x83 group.
enum class AluOp : std::uint8_t { Add = 0, Or, Adc, Sbb, And, Sub, Xor, Cmp };

enum Reg : std::uint8_t { EAX = 0, ECX, EDX, EBX, ESP, EBP, ESI, EDI };

inline const char* opcode_class_name(OpcodeClass c) {
  switch (c) {
    case OpcodeClass::Unknown: return "unknown";
    case OpcodeClass::Nop: return "nop";
    case OpcodeClass::MovRegReg: return "mov r32,r32";
    case OpcodeClass::Jcc: return "jcc rel8";
    case OpcodeClass::Push: return "push r32";
    case OpcodeClass::Pop: return "pop r32";
    case OpcodeClass::Pushf: return "pushf";
    case OpcodeClass::Popf: return "popf";
    case OpcodeClass::Not: return "not r32";
    case OpcodeClass::Neg: return "neg r32";
    case OpcodeClass::AluImm8: return "alu r32,imm8";
    case OpcodeClass::Inc: return "inc r32";
    case OpcodeClass::Dec: return "dec r32";
    case OpcodeClass::MovRegImm: return "mov r32,imm32";
    case OpcodeClass::Ret: return "ret";
  }
  return "?";
}

// Full decode of one instruction; the emulator executes from this.
struct DecodedInsn {
  OpcodeClass cls = OpcodeClass::Unknown;
  std::uint8_t length = 0;
  std::uint8_t reg = 0;  // destination / operand register
  std::uint8_t src = 0;  // source register (mov r32,r32)
  AluOp alu = AluOp::Add;
  std::uint8_t cond = 0;  // jcc condition nibble
  std::int32_t imm = 0;   // sign-extended imm8, imm32 or rel8
};

struct Instruction {
  std::size_t offset = 0;
  std::size_t length = 0;
  OpcodeClass opcode_class = OpcodeClass::Unknown;

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

struct InstructionStream {
  std::vector<Instruction> instructions;
  std::size_t section_len = 0;

  std::size_t size() const noexcept { return instructions.size(); }

  std::vector<std::size_t> lengths() const {
    std::vector<std::size_t> out;
    out.reserve(instructions.size());
    for (const auto& i : instructions) out.push_back(i.length);
    return out;
  }

  // Boundary equality; opcode classes are not compared because sidecar
  // streams do not carry them.
  bool same_boundaries(const InstructionStream& o) const {
    if (section_len != o.section_len || size() != o.size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (instructions[i].offset != o.instructions[i].offset ||
          instructions[i].length != o.instructions[i].length)
        return false;
    return true;
  }
};

// Decodes the instruction at `offset`. Throws DecodeError outside the subset
// or when the encoding runs past the end of `code`.
inline DecodedInsn decode_one(ByteView code, std::size_t offset) {
  if (offset >= code.size()) throw DecodeError("offset past end of code", offset);
  const std::uint8_t op = code[offset];
  const std::size_t avail = code.size() - offset;
  auto need = [&](std::size_t n) {
    if (avail < n) throw DecodeError("truncated instruction", offset);
  };
  // Register-direct ModRM only; memory operands are outside the subset.
  auto modrm = [&]() {
    need(2);
    const std::uint8_t m = code[offset + 1];
    if ((m >> 6) != 3) throw DecodeError("memory operand not supported", offset);
    return m;
  };

  DecodedInsn d;
  if (op == 0x90) {
    d.cls = OpcodeClass::Nop;
    d.length = 1;
  } else if (op == 0x89) {
    const auto m = modrm();
    d.cls = OpcodeClass::MovRegReg;
    d.length = 2;
    d.reg = m & 7;
    d.src = (m >> 3) & 7;
  } else if (op >= 0x70 && op <= 0x7f) {
    need(2);
    d.cls = OpcodeClass::Jcc;
    d.length = 2;
    d.cond = op & 0x0f;
    d.imm = static_cast<std::int8_t>(code[offset + 1]);
  } else if (op >= 0x50 && op <= 0x57) {
    d.cls = OpcodeClass::Push;
    d.length = 1;
    d.reg = op & 7;
  } else if (op >= 0x58 && op <= 0x5f) {
    d.cls = OpcodeClass::Pop;
    d.length = 1;
    d.reg = op & 7;
  } else if (op == 0x9c) {
    d.cls = OpcodeClass::Pushf;
    d.length = 1;
  } else if (op == 0x9d) {
    d.cls = OpcodeClass::Popf;
    d.length = 1;
  } else if (op == 0xf7) {
    const auto m = modrm();
    const auto ext = (m >> 3) & 7;
    if (ext == 2)
      d.cls = OpcodeClass::Not;
    else if (ext == 3)
      d.cls = OpcodeClass::Neg;
    else
      throw DecodeError("unsupported 0xF7 group member /" + std::to_string(ext), offset);
    d.length = 2;
    d.reg = m & 7;
  } else if (op == 0x83) {
    const auto m = modrm();
    need(3);
    d.cls = OpcodeClass::AluImm8;
    d.length = 3;
    d.reg = m & 7;
    d.alu = static_cast<AluOp>((m >> 3) & 7);
    d.imm = static_cast<std::int8_t>(code[offset + 2]);
  } else if (op == 0xff) {
    const auto m = modrm();
    const auto ext = (m >> 3) & 7;
    if (ext == 0)
      d.cls = OpcodeClass::Inc;
    else if (ext == 1)
      d.cls = OpcodeClass::Dec;
    else
      throw DecodeError("unsupported 0xFF group member /" + std::to_string(ext), offset);
    d.length = 2;
    d.reg = m & 7;
  } else if (op >= 0xb8 && op <= 0xbf) {
    need(5);
    d.cls = OpcodeClass::MovRegImm;
    d.length = 5;
    d.reg = op & 7;
    d.imm = static_cast<std::int32_t>(std::uint32_t{code[offset + 1]} |
                                      (std::uint32_t{code[offset + 2]} << 8) |
                                      (std::uint32_t{code[offset + 3]} << 16) |
                                      (std::uint32_t{code[offset + 4]} << 24));
  } else if (op == 0xc3) {
    d.cls = OpcodeClass::Ret;
    d.length = 1;
  } else {
    std::ostringstream msg;
    msg << "unsupported opcode 0x" << std::hex << int{op};
    throw DecodeError(msg.str(), offset);
  }
  return d;
}

inline InstructionStream decode(ByteView code) {
  if (code.empty()) throw InvalidArgument("decode: empty code section");
  InstructionStream s;
  s.section_len = code.size();
  std::size_t off = 0;
  while (off < code.size()) {
    const auto d = decode_one(code, off);
    s.instructions.push_back({off, d.length, d.cls});
    off += d.length;
  }
  return s;
}

// Boundary sidecar: one "offset,length" line per instruction.
inline InstructionStream load_boundaries(std::string_view text) {
  InstructionStream s;
  std::size_t line_no = 0;
  std::size_t expected = 0;
  std::size_t pos = 0;
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
    auto parse = [&](std::string_view f) -> std::size_t {
      if (f.empty() || f.size() > 12) throw FormatError("bad number", line_no);
      std::size_t v = 0;
      for (char c : f) {
        if (c < '0' || c > '9') throw FormatError("bad number", line_no);
        v = v * 10 + static_cast<std::size_t>(c - '0');
      }
      return v;
    };
    const std::size_t off = parse(line.substr(0, comma));
    const std::size_t len = parse(line.substr(comma + 1));
    if (len < 1 || len > 15) throw FormatError("instruction length out of range", line_no);
    if (off < expected)
      throw FormatError(s.instructions.empty() || off > s.instructions.back().offset
                            ? "overlap with previous instruction"
                            : "non-monotonic offset",
                        line_no);
    if (off > expected) throw FormatError("gap before instruction", line_no);
    s.instructions.push_back({off, len, OpcodeClass::Unknown});
    expected = off + len;
  }
  if (s.instructions.empty()) throw FormatError("empty boundary file");
  s.section_len = expected;
  return s;
}

inline std::string format_boundaries(const InstructionStream& s) {
  std::string out;
  for (const auto& i : s.instructions)
    out += std::to_string(i.offset) + "," + std::to_string(i.length) + "\n";
  return out;
}

// Throws unless `s` tiles exactly `section_len` bytes starting at 0.
inline void check_tiling(const InstructionStream& s, std::size_t section_len) {
  std::size_t expected = 0;
  for (std::size_t i = 0; i < s.instructions.size(); ++i) {
    const auto& ins = s.instructions[i];
    if (ins.offset != expected || ins.length < 1 || ins.length > 15)
      throw InvalidArgument("instruction stream does not tile the code at #" + std::to_string(i));
    expected += ins.length;
  }
  if (expected != section_len || s.section_len != section_len)
    throw InvalidArgument("instruction stream covers " + std::to_string(expected) + " of " +
                          std::to_string(section_len) + " bytes");
}

inline std::string to_hex(ByteView b) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(b.size() * 2);
  for (auto v : b) {
    s.push_back(kDigits[v >> 4]);
    s.push_back(kDigits[v & 15]);
  }
  return s;
}

inline Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2) throw FormatError("odd-length hex string");
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw FormatError(std::string("bad hex digit '") + c + "'");
  };
  Bytes out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2)
    out.push_back(static_cast<std::uint8_t>(nib(hex[i]) << 4 | nib(hex[i + 1])));
  return out;
}

}  // namespace mvae::isa
