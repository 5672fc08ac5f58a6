#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mlrf/tensor.hpp"

namespace mlrf {

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// Batched product over the leading axis: [B x m x k] . [B x k x n] -> [B x m x n]
Tensor bmm(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);

/// Adds a length-n vector to every row of an [m x n] matrix.
Tensor add_row(const Tensor& x, const Tensor& row);

/// x.w + b for x [m x k], w [k x n], b [n].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);

/// Numerically stable softmax along `axis` (max subtracted per slice).
Tensor softmax(const Tensor& x, std::size_t axis);

/// Normalizes over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
inline constexpr double kLayerNormEpsilon = 1e-6;

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

/// Rows of `table` [V x d] gathered by id -> [ids.size() x d].
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Adds `penalty` to scores wherever `allowed` is zero. `allowed` is
/// row-major with the same element count as `scores`.
Tensor mask_fill(const Tensor& scores, std::span<const std::uint8_t> allowed, double penalty);

/// Inverted dropout: zeroes with probability p and rescales survivors by
/// 1/(1-p). Identity when p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

/// Mean over non-pad rows of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int pad_id);

/// Row-wise log-softmax values without tape recording.
std::vector<double> log_softmax_row(std::span<const double> logits);

}  // namespace mlrf
