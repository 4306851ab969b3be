#pragma once

// Benchmark plumbing: Middlebury .flo file I/O, end-point / angular error
// metrics, color-wheel flow rendering, and the radial-bin visualization of
// the distributed motion representation.

#include <cstdint>
#include <string>
#include <vector>

#include "motionflow/image_io.hpp"
#include "motionflow/tensor.hpp"

namespace motionflow {

// Values above this magnitude mark unknown flow in .flo files.
constexpr float kUnknownFlowThreshold = 1e9f;

struct FlowWithMask {
    Tensor3 flow;  // H x W x 2
    Tensor3 mask;  // H x W x 1; 1 = known
};

// .flo layout: float magic 202021.25 ("PIEH"), int32 width, int32 height,
// then row-major interleaved (u, v) float32 pairs; all little-endian.
FlowWithMask read_flo(const std::vector<uint8_t>& bytes);
FlowWithMask read_flo(const std::string& path);
// Masked-out pixels are written as the unknown sentinel. Round trips of
// finite flows are bit-exact.
std::vector<uint8_t> write_flo(const Tensor3& flow, const Tensor3& mask);
void write_flo(const std::string& path, const Tensor3& flow, const Tensor3& mask);

struct MetricReport {
    Scalar epe = 0;   // mean end-point error, px
    Scalar aae = 0;   // mean angular error, degrees
    size_t pixels = 0;  // valid pixels measured
};

// Mean Euclidean distance between flows over valid pixels.
Scalar epe(const Tensor3& flow, const Tensor3& gt, const Tensor3& mask);
// Mean angle between (u, v, 1) vectors, in degrees.
Scalar aae(const Tensor3& flow, const Tensor3& gt, const Tensor3& mask);
MetricReport flow_metrics(const Tensor3& flow, const Tensor3& gt,
                          const Tensor3& mask);

// Standard color-wheel rendering: hue = direction, saturation = magnitude /
// max_magnitude (clamped), zero flow = white. max_magnitude <= 0 selects the
// 99th percentile of the image's own magnitudes.
Image8 flow_to_color(const Tensor3& flow, Scalar max_magnitude = 0);

// One pixel's distribution as T concentric rings (speeds, innermost =
// slowest) split into O angular sectors (orientations); brightness 0.5 marks
// the uniform value 1/(T*O), saturating at twice that.
Image8 distribution_to_radial_plot(const Tensor3& dist, int i, int j, int speeds,
                                   int orientations, int image_size = 128);

// Raw distribution dump paired with cmd_infer --save-dist: "MFDS" magic,
// int32 {height, width, speeds, orientations}, float64 values.
void write_distribution(const std::string& path, const Tensor3& dist, int speeds,
                        int orientations);
Tensor3 read_distribution(const std::string& path, int* speeds, int* orientations);

}  // namespace motionflow
