#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace reengage::checkpoint {

// Single-file container for named arrays plus a configuration echo.
// Byte layout (all integers little-endian):
//
//   offset size  field
//   0      8     magic "GCRLCP01"
//   8      4     u32 format version (currently 1)
//   12     4     u32 config length in bytes
//   16     .     config echo, UTF-8 text
//   .      4     u32 array count
//   per array:
//          2     u16 name length
//          .     name, UTF-8
//          1     u8 ndim (1 or 2)
//          8*nd  u64 dimensions (rows, cols)
//          8*N   f64 payload, row-major
//
// Any language with a binary reader can consume this without extra metadata.

struct Contents {
  std::string config_echo;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> arrays;
};

void write(std::ostream& os, const Contents& contents);
void write_file(const std::string& path, const Contents& contents);

Contents read(std::istream& is);
Contents read_file(const std::string& path);

}  // namespace reengage::checkpoint
