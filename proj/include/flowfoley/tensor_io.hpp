#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flowfoley/tensor.hpp"

namespace ff {

// Binary tensor format:
//   magic "FFT1" | rank: u32 LE | dims: rank x u64 LE | data: f32 LE array
// No padding anywhere; round-trips are bit-exact.
void write_tensor(const Tensor& t, std::ostream& out);
Tensor read_tensor(std::istream& in);

std::vector<std::uint8_t> tensor_to_bytes(const Tensor& t);
Tensor tensor_from_bytes(const std::vector<std::uint8_t>& bytes);

void write_tensor_file(const Tensor& t, const std::string& path);
Tensor read_tensor_file(const std::string& path);

// Little-endian scalar helpers shared by the container formats.
void put_u32(std::ostream& out, std::uint32_t v);
void put_u64(std::ostream& out, std::uint64_t v);
void put_f32(std::ostream& out, float v);
void put_bytes(std::ostream& out, const void* data, std::size_t len);
// Length-prefixed (u32 LE) UTF-8 string.
void put_string(std::ostream& out, const std::string& s);

std::uint32_t get_u32(std::istream& in, const char* what);
std::uint64_t get_u64(std::istream& in, const char* what);
float get_f32(std::istream& in, const char* what);
void get_bytes(std::istream& in, void* data, std::size_t len, const char* what);
std::string get_string(std::istream& in, const char* what);
void expect_magic(std::istream& in, const char magic[4], const char* what);

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::string& bytes);

}  // namespace ff
