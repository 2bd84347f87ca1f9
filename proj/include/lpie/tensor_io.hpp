#pragma once

#include <filesystem>
#include <istream>
#include <ostream>

#include "lpie/tensor.hpp"

// "LPT1" raw tensor files: magic `LPT1`, four u32-LE dims (n, c, h, w), then
// n*c*h*w IEEE-754 float32-LE values in row-major order.
namespace lpie {

void write_lpt1(std::ostream& os, const Tensor<float>& t);
Tensor<float> read_lpt1(std::istream& is);

void save_lpt1(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> load_lpt1(const std::filesystem::path& path);

}  // namespace lpie
