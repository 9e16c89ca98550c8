#pragma once

#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

namespace ff {

// CRC-32 (IEEE 802.3 polynomial), used as the checkpoint trailer.
std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed = 0);

// Incremental SHA-256 for artifact fingerprints.
class Sha256 {
public:
    Sha256();
    void update(const void* data, std::size_t len);
    // Finalizes and returns the 32-byte digest; the object is spent afterwards.
    std::vector<std::uint8_t> digest();
    std::string hex();

private:
    void process_block(const std::uint8_t* block);
    std::uint32_t h_[8];
    std::uint8_t buf_[64];
    std::size_t buf_len_ = 0;
    std::uint64_t total_len_ = 0;
    bool done_ = false;
};

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);

}  // namespace ff
