#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace uaplab {

// Deterministic RNG with explicitly implemented distributions so that results
// are bit-identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // [0,1)
    double uniform() {
        return (gen_() >> 11) * (1.0 / 9007199254740992.0); // 53-bit mantissa
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    // Box-Muller, standard normal
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(6.283185307179586 * u2);
        has_spare_ = true;
        return mag * std::cos(6.283185307179586 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = gen_() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

    // derive an independent stream, e.g. one per dataset item
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t index) {
        std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Runs fn(i) for i in [0,n). With jobs > 1 the index range is split across
// threads; fn must only write to per-index slots for deterministic results.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel log_level();           // from UAPLAB_LOG, default info
void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

std::string read_file(const std::string& path);                     // throws IoError
std::vector<unsigned char> read_file_bytes(const std::string& path);
// temp file + rename, so readers never observe a partial artifact
void write_file_atomic(const std::string& path, const void* data, std::size_t size);
void write_file_atomic(const std::string& path, const std::string& text);

std::string format_fixed(double value, int decimals);

} // namespace uaplab
