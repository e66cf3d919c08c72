// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dkctx/numerics/ops.hpp"

namespace dkctx::layers {

// Linear map x[n x in] -> [n x out], params <prefix>/w and <prefix>/b.
inline void init_linear(ParamStore& s, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  s.add_uniform(prefix + "/w", {in, out}, in, rng);
  s.add_uniform(prefix + "/b", {1, out}, in, rng);
}

inline Var linear(Tape& t, ParamStore& s, const std::string& prefix, Var x) {
  return dkctx::linear(x, t.param(s, prefix + "/w"), t.param(s, prefix + "/b"));
}

inline void init_layer_norm(ParamStore& s, const std::string& prefix, std::size_t dim) {
  s.add_constant(prefix + "/gamma", {1, dim}, 1.0);
  s.add_constant(prefix + "/beta", {1, dim}, 0.0);
}

inline Var layer_norm(Tape& t, ParamStore& s, const std::string& prefix, Var x) {
  return dkctx::layer_norm(x, t.param(s, prefix + "/gamma"), t.param(s, prefix + "/beta"));
}

inline void init_attention(ParamStore& s, const std::string& prefix, std::size_t dim, Rng& rng) {
  for (const char* p : {"q", "k", "v", "o"}) init_linear(s, prefix + "/" + p, dim, dim, rng);
}

/// Scaled dot-product multi-head self-attention. key_mask[j] == false removes
/// column j from every softmax. trace, if given, receives one [n x n]
/// probability matrix per head.
inline Var self_attention(Tape& t, ParamStore& s, const std::string& prefix, Var x, std::size_t heads,
                          const std::vector<bool>* key_mask = nullptr, std::vector<Tensor>* trace = nullptr) {
  const std::size_t d = x.value().cols();
  if (heads == 0 || d % heads != 0)
    throw ShapeError("self_attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  if (key_mask && key_mask->size() != x.value().rows()) throw ShapeError("self_attention: key mask length differs from rows");
  const std::size_t dh = d / heads;
  Var q = linear(t, s, prefix + "/q", x);
  Var k = linear(t, s, prefix + "/k", x);
  Var v = linear(t, s, prefix + "/v", x);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = slice_cols(v, h * dh, (h + 1) * dh);
    Var p = softmax_rows(scale(matmul_nt(qh, kh), inv), key_mask);
    if (trace) trace->push_back(p.value());
    outs.push_back(matmul(p, vh));
  }
  return linear(t, s, prefix + "/o", heads == 1 ? outs[0] : concat_cols(outs));
}

inline void init_ffn(ParamStore& s, const std::string& prefix, std::size_t dim, std::size_t hidden, Rng& rng) {
  init_linear(s, prefix + "/in", dim, hidden, rng);
  init_linear(s, prefix + "/out", hidden, dim, rng);
}

inline Var ffn(Tape& t, ParamStore& s, const std::string& prefix, Var x) {
  return linear(t, s, prefix + "/out", gelu(linear(t, s, prefix + "/in", x)));
}

}  // namespace dkctx::layers
