#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mta/errors.hpp"

namespace mta {

// Dense row-major float64 matrix. Row-major is the canonical layout for the
// on-disk tensor record format as well, so serialization is a straight copy.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }

    double& operator()(std::size_t r, std::size_t c);
    double operator()(std::size_t r, std::size_t c) const;

    const std::vector<double>& values() const noexcept { return values_; }
    std::vector<double>& values() noexcept { return values_; }

    bool all_finite() const noexcept;

    // bitwise equality, used by determinism tests
    friend bool operator==(const Matrix& a, const Matrix& b);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix scale_add(double alpha, const Matrix& a, double beta, const Matrix& b);
std::vector<double> matvec(const Matrix& a, const std::vector<double>& x);

// Deterministic seeded generator. The stream is SplitMix64 (Steele, Lea,
// Flood 2014): state advances by the golden-gamma constant and the output is
// a two-round xor-multiply finalizer. Pure 64-bit integer arithmetic, so the
// value stream is identical on every platform for a given seed. Doubles are
// the top 53 bits scaled into [0, 1).
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t next_u64();
    double next_double();                       // [0, 1)
    double uniform(double lo, double hi);       // [lo, hi), requires lo <= hi
    std::size_t uniform_index(std::size_t n);   // [0, n), unbiased via masked rejection

    // approximately normal(0, 1): Irwin-Hall sum of 12 uniforms minus 6.
    // Chosen over Box-Muller to keep the stream free of libm calls.
    double approx_normal();

    // Fisher-Yates, iterating from the back
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t seed() const noexcept { return seed_; }

    // independent stream for a named unit of work (per-anchor, per-user)
    SeededRng derive(std::string_view label) const;

private:
    std::uint64_t seed_;
    std::uint64_t state_;
};

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi,
                      SeededRng& rng);

std::uint64_t fnv1a64(std::string_view s);
std::uint64_t mix64(std::uint64_t x); // SplitMix64 finalizer, used as an avalanche step

// Tensor record, the one binary format everything else builds on:
//   "MTAT" magic, one version byte (0x01), rows and cols as u32 little
//   endian, then rows*cols IEEE-754 binary64 values, little endian,
//   row-major. Readers validate magic, version and payload length.
void write_tensor_record(std::ostream& out, const Matrix& m);
Matrix read_tensor_record(std::istream& in);
std::string tensor_record_bytes(const Matrix& m);

void save_tensor(const std::filesystem::path& path, const Matrix& m);
Matrix load_tensor(const std::filesystem::path& path);

} // namespace mta
