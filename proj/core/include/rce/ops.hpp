#pragma once

#include <cstddef>

#include "rce/tape.hpp"
#include "rce/tensor.hpp"

/// Differentiable primitives. Every op validates shapes eagerly and throws
/// std::invalid_argument naming the offending shapes.
namespace rce::ops {

/// [m x k] . [k x n] -> [m x n]
Var matmul(Tape& tape, Var a, Var b);

/// Dense layer: x [N x D], weight [O x D], bias [O] -> x . weight^T + bias.
Var linear(Tape& tape, Var x, Var weight, Var bias);

/// Cross-correlation with zero padding.
/// x [N x C x H x W], kernels [K x C x h x w] -> [N x K x H' x W'],
/// H' = (H + 2p - h) / stride + 1.
Var conv2d(Tape& tape, Var x, Var kernels, std::size_t stride, std::size_t padding);

/// Adds bias [K] to every spatial position of channel k of x [N x K x H x W].
Var add_channel_bias(Tape& tape, Var x, Var bias);

/// max(x, leak * x); the derivative at 0 is `leak`.
Var leaky_relu(Tape& tape, Var x, double leak);

/// Non-overlapping max pooling (stride == window) over the two trailing axes.
/// Output extents are floored; ties pick the first element in scan order.
Var max_pool2d(Tape& tape, Var x, std::size_t window);

Var reshape(Tape& tape, Var x, Shape shape);

/// Max-shifted softmax along the last axis.
Var softmax(Tape& tape, Var logits);

Var neg(Tape& tape, Var x);
Var add(Tape& tape, Var a, Var b);
Var sub(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var x, double factor);
Var add_scalar(Tape& tape, Var x, double offset);
Var square(Tape& tape, Var x);
Var tanh(Tape& tape, Var x);

/// Sum of every element -> scalar.
Var sum(Tape& tape, Var x);
/// Mean of every element -> scalar.
Var mean(Tape& tape, Var x);
/// x [N x ...] -> [N], summing everything but the leading axis.
Var sum_rows(Tape& tape, Var x);

}  // namespace rce::ops
