#pragma once

// Global precision switch. Training, evaluation and rendering run in
// TrainReal; gradient checks always instantiate the templates with CheckReal.
#ifndef RSTN_TRAIN_REAL
#define RSTN_TRAIN_REAL float
#endif

namespace rstn {

using TrainReal = RSTN_TRAIN_REAL;
using CheckReal = double;

inline constexpr int kNumClasses = 10;
inline constexpr int kSequenceLength = 3;
inline constexpr int kCanvasSize = 100;

}  // namespace rstn
