#pragma once

#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

namespace uaplab {

class Sha256 {
public:
    Sha256();
    void update(const void* data, std::size_t size);
    void update(const std::string& s) { update(s.data(), s.size()); }
    std::string hex_digest(); // finalizes

    static std::string of(const void* data, std::size_t size);
    static std::string of(const std::string& s) { return of(s.data(), s.size()); }
    static std::string of_file(const std::string& path);

private:
    void process_block(const unsigned char* block);

    std::uint32_t state_[8];
    unsigned char buffer_[64];
    std::size_t buffer_len_ = 0;
    std::uint64_t total_len_ = 0;
};

std::uint32_t crc32_of(const void* data, std::size_t size);

} // namespace uaplab
