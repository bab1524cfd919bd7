#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "croma/tensor.hpp"

namespace croma {

// Binary tensor container. Layout, all little-endian:
//   bytes 0..3   magic "CRMA"
//   u32          version (1)
//   u32          dtype code (0 = f64)
//   u32          ndim
//   ndim x u64   extents
//   payload      row-major f64
struct CrmaArray {
  Shape shape;
  std::vector<double> data;
};

void write_crma(const std::string& path, const Shape& shape, const std::vector<double>& data);
void write_crma(const std::string& path, const Tensor& t);
CrmaArray read_crma(const std::string& path);

}  // namespace croma
