#include "flowfoley/tensor_io.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "flowfoley/errors.hpp"

namespace ff {

namespace {
std::uint64_t tell_in(std::istream& in) {
    auto pos = in.tellg();
    return pos < 0 ? 0 : static_cast<std::uint64_t>(pos);
}
}  // namespace

void put_bytes(std::ostream& out, const void* data, std::size_t len) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
    if (!out) throw IoError("write failed");
}

void put_u32(std::ostream& out, std::uint32_t v) {
    std::uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    put_bytes(out, b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    put_bytes(out, b, 8);
}

void put_f32(std::ostream& out, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(out, u);
}

void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    put_bytes(out, s.data(), s.size());
}

void get_bytes(std::istream& in, void* data, std::size_t len, const char* what) {
    std::uint64_t at = tell_in(in);
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
    if (static_cast<std::size_t>(in.gcount()) != len) {
        throw FormatError(std::string("truncated input reading ") + what, at);
    }
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    std::uint8_t b[4];
    get_bytes(in, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& in, const char* what) {
    std::uint8_t b[8];
    get_bytes(in, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

float get_f32(std::istream& in, const char* what) {
    std::uint32_t u = get_u32(in, what);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

std::string get_string(std::istream& in, const char* what) {
    std::uint32_t len = get_u32(in, what);
    std::string s(len, '\0');
    if (len) get_bytes(in, s.data(), len, what);
    return s;
}

void expect_magic(std::istream& in, const char magic[4], const char* what) {
    std::uint64_t at = tell_in(in);
    char got[4];
    get_bytes(in, got, 4, what);
    if (std::memcmp(got, magic, 4) != 0) {
        throw FormatError(std::string("bad magic for ") + what + ", expected \"" +
                              std::string(magic, 4) + "\"",
                          at);
    }
}

void write_tensor(const Tensor& t, std::ostream& out) {
    put_bytes(out, "FFT1", 4);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::int64_t d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
    for (std::int64_t i = 0; i < t.numel(); ++i) put_f32(out, t[i]);
}

Tensor read_tensor(std::istream& in) {
    expect_magic(in, "FFT1", "tensor");
    std::uint32_t rank = get_u32(in, "tensor rank");
    if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), tell_in(in));
    std::vector<std::int64_t> shape(rank);
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        std::uint64_t d = get_u64(in, "tensor dim");
        if (d == 0 || d > (1ull << 32)) {
            throw FormatError("invalid tensor dim " + std::to_string(d), tell_in(in));
        }
        shape[i] = static_cast<std::int64_t>(d);
        numel *= d;
    }
    std::vector<float> data(numel);
    for (std::uint64_t i = 0; i < numel; ++i) data[i] = get_f32(in, "tensor data");
    return Tensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> tensor_to_bytes(const Tensor& t) {
    std::ostringstream os(std::ios::binary);
    write_tensor(t, os);
    std::string s = os.str();
    return std::vector<std::uint8_t>(s.begin(), s.end());
}

Tensor tensor_from_bytes(const std::vector<std::uint8_t>& bytes) {
    std::string s(bytes.begin(), bytes.end());
    std::istringstream is(s, std::ios::binary);
    Tensor t = read_tensor(is);
    // Trailing garbage means the buffer was not a single tensor.
    is.peek();
    if (!is.eof()) throw FormatError("trailing bytes after tensor", tell_in(is));
    return t;
}

void write_tensor_file(const Tensor& t, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    write_tensor(t, f);
}

Tensor read_tensor_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    return read_tensor(f);
}

std::string read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace ff
