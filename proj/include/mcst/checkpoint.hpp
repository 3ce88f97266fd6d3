// Binary model checkpoint. All integers are little-endian u32, all reals
// little-endian IEEE-754 f64, strings are a u32 byte length then the bytes.
//
//   "MCSTCKPT"  u32 version (=1)
//   u32 d_model, n_heads, n_enc_layers, n_dec_layers, ffn_mult
//   u32 flags: bit0 use_units, bit1 positional, bit2 mask_pad_in_encoder,
//              bit3 mask_pad_in_cross, bit4 aligned input
//   u32 n_candidates
//   3 vocabularies (source, target, unit): u32 kind, u32 count, strings
//   u32 tensor count, then per tensor in visit_params order:
//     string name, u32 rows, u32 cols, rows*cols f64 in row-major order
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "mcst/model.hpp"

namespace mcst {

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), 4);
}

inline void put_f64(std::ostream& out, double x) {
  std::uint64_t v;
  std::memcpy(&v, &x, 8);
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), 8);
}

inline void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw Error("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 8)) throw Error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
  double x;
  std::memcpy(&x, &v, 8);
  return x;
}

inline std::string get_str(std::istream& in) {
  const auto n = get_u32(in);
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw Error("checkpoint truncated");
  return s;
}

inline void put_vocab(std::ostream& out, const Vocabulary& v) {
  put_u32(out, static_cast<std::uint32_t>(v.kind()));
  put_u32(out, static_cast<std::uint32_t>(v.size()));
  for (const auto& s : v.surfaces()) put_str(out, s);
}

inline Vocabulary get_vocab(std::istream& in) {
  const auto kind = static_cast<VocabKind>(get_u32(in));
  const auto n = get_u32(in);
  Vocabulary v(kind);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto s = get_str(in);
    if (i < static_cast<std::uint32_t>(kNumReserved)) {
      if (s != v.surfaces()[i]) throw Error("checkpoint vocabulary has wrong reserved token '" + s + "'");
      continue;
    }
    if (v.add(s) != static_cast<TokenId>(i)) throw Error("checkpoint vocabulary has duplicate '" + s + "'");
  }
  return v;
}

}  // namespace detail

inline void save_model(std::ostream& out, const SeqModel& m) {
  out.write("MCSTCKPT", 8);
  detail::put_u32(out, 1);
  const auto& d = m.dims;
  for (int v : {d.d_model, d.n_heads, d.n_enc_layers, d.n_dec_layers, d.ffn_mult})
    detail::put_u32(out, static_cast<std::uint32_t>(v));
  detail::put_u32(out, (d.use_units ? 1u : 0u) | (d.positional ? 2u : 0u) | (d.mask_pad_in_encoder ? 4u : 0u) |
                           (d.mask_pad_in_cross ? 8u : 0u) | (m.input.aligned ? 16u : 0u));
  detail::put_u32(out, static_cast<std::uint32_t>(m.input.n_candidates));
  detail::put_vocab(out, m.src_vocab);
  detail::put_vocab(out, m.tgt_vocab);
  detail::put_vocab(out, m.unit_vocab);
  std::uint32_t count = 0;
  visit_params(d, [&](const std::string&, const auto&) { ++count; }, m.params);
  detail::put_u32(out, count);
  visit_params(
      d,
      [&](const std::string& name, const auto& t) {
        detail::put_str(out, name);
        detail::put_u32(out, static_cast<std::uint32_t>(t.rows()));
        detail::put_u32(out, static_cast<std::uint32_t>(t.cols()));
        for (Eigen::Index r = 0; r < t.rows(); ++r)
          for (Eigen::Index c = 0; c < t.cols(); ++c) detail::put_f64(out, t(r, c));
      },
      m.params);
}

inline SeqModel load_model(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::string(magic, 8) != "MCSTCKPT") throw Error("not a model checkpoint");
  if (detail::get_u32(in) != 1) throw Error("unsupported checkpoint version");
  ModelDims d;
  d.d_model = static_cast<int>(detail::get_u32(in));
  d.n_heads = static_cast<int>(detail::get_u32(in));
  d.n_enc_layers = static_cast<int>(detail::get_u32(in));
  d.n_dec_layers = static_cast<int>(detail::get_u32(in));
  d.ffn_mult = static_cast<int>(detail::get_u32(in));
  const auto flags = detail::get_u32(in);
  d.use_units = flags & 1u;
  d.positional = flags & 2u;
  d.mask_pad_in_encoder = flags & 4u;
  d.mask_pad_in_cross = flags & 8u;
  SeqModel m;
  m.dims = d;
  m.input.aligned = flags & 16u;
  m.input.n_candidates = detail::get_u32(in);
  m.src_vocab = detail::get_vocab(in);
  m.tgt_vocab = detail::get_vocab(in);
  m.unit_vocab = detail::get_vocab(in);
  m.params = zero_params(d, m.src_vocab.size(), m.tgt_vocab.size(), m.unit_vocab.size());
  std::uint32_t expected = 0;
  visit_params(d, [&](const std::string&, const auto&) { ++expected; }, m.params);
  if (detail::get_u32(in) != expected) throw Error("checkpoint tensor count does not match its dimensions");
  visit_params(
      d,
      [&](const std::string& name, auto& t) {
        const auto got = detail::get_str(in);
        if (got != name) throw Error("checkpoint tensor '" + got + "' where '" + name + "' was expected");
        const auto rows = detail::get_u32(in), cols = detail::get_u32(in);
        if (rows != static_cast<std::uint32_t>(t.rows()) || cols != static_cast<std::uint32_t>(t.cols()))
          throw Error("checkpoint tensor '" + name + "' has the wrong shape");
        for (Eigen::Index r = 0; r < t.rows(); ++r)
          for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = detail::get_f64(in);
      },
      m.params);
  return m;
}

inline void save_model_file(const std::string& path, const SeqModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  save_model(out, m);
}

inline SeqModel load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return load_model(in);
}

inline std::string model_bytes(const SeqModel& m) {
  std::ostringstream out(std::ios::binary);
  save_model(out, m);
  return out.str();
}

}  // namespace mcst
