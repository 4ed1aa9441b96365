#include "mta/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mta {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw ShapeError(what);
}

} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_)
        throw ShapeError("matrix value count does not match rows*cols");
}

double& Matrix::operator()(std::size_t r, std::size_t c) {
    if (r >= rows_ || c >= cols_)
        throw IndexError("matrix index out of range");
    return values_[r * cols_ + c];
}

double Matrix::operator()(std::size_t r, std::size_t c) const {
    if (r >= rows_ || c >= cols_)
        throw IndexError("matrix index out of range");
    return values_[r * cols_ + c];
}

bool Matrix::all_finite() const noexcept {
    for (double v : values_)
        if (!std::isfinite(v)) return false;
    return true;
}

bool operator==(const Matrix& a, const Matrix& b) {
    if (a.rows_ != b.rows_ || a.cols_ != b.cols_) return false;
    // memcmp, not ==, so that NaN payloads and signed zeros count as written
    return std::memcmp(a.values_.data(), b.values_.data(),
                       a.values_.size() * sizeof(double)) == 0;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = av[i * a.cols() + k];
            if (aik == 0.0) continue;
            const double* brow = &bv[k * b.cols()];
            double* orow = &ov[i * b.cols()];
            for (std::size_t j = 0; j < b.cols(); ++j)
                orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix scale_add(double alpha, const Matrix& a, double beta, const Matrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(),
            "scale_add: shapes differ");
    Matrix out(a.rows(), a.cols());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double x = alpha * av[i];
        const double y = beta * bv[i];
        ov[i] = x + y;
    }
    return out;
}

std::vector<double> matvec(const Matrix& a, const std::vector<double>& x) {
    require(a.cols() == x.size(), "matvec: dimension mismatch");
    std::vector<double> out(a.rows(), 0.0);
    const auto& av = a.values();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double acc = 0.0;
        const double* row = &av[i * a.cols()];
        for (std::size_t j = 0; j < a.cols(); ++j)
            acc += row[j] * x[j];
        out[i] = acc;
    }
    return out;
}

std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
}

std::uint64_t SeededRng::next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    return mix64(state_);
}

double SeededRng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) {
    if (!(lo <= hi)) throw ParameterError("uniform: lo must be <= hi");
    return lo + (hi - lo) * next_double();
}

std::size_t SeededRng::uniform_index(std::size_t n) {
    if (n == 0) throw ParameterError("uniform_index: empty range");
    if (n == 1) return 0;
    // smallest power-of-two mask covering n, rejection keeps it unbiased
    std::uint64_t mask = n - 1;
    mask |= mask >> 1;
    mask |= mask >> 2;
    mask |= mask >> 4;
    mask |= mask >> 8;
    mask |= mask >> 16;
    mask |= mask >> 32;
    for (;;) {
        std::uint64_t v = next_u64() & mask;
        if (v < n) return static_cast<std::size_t>(v);
    }
}

double SeededRng::approx_normal() {
    double acc = 0.0;
    for (int i = 0; i < 12; ++i) acc += next_double();
    return acc - 6.0;
}

SeededRng SeededRng::derive(std::string_view label) const {
    return SeededRng(seed_ ^ fnv1a64(label));
}

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi,
                      SeededRng& rng) {
    if (!(lo <= hi)) throw ParameterError("uniform_matrix: lo must be <= hi");
    Matrix m(rows, cols);
    for (double& v : m.values())
        v = rng.uniform(lo, hi);
    return m;
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

namespace {

constexpr char kMagic[4] = {'M', 'T', 'A', 'T'};
constexpr unsigned char kVersion = 0x01;

void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) |
           (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f64_le(std::string& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

} // namespace

std::string tensor_record_bytes(const Matrix& m) {
    if (m.rows() > 0xFFFFFFFFull || m.cols() > 0xFFFFFFFFull)
        throw ParameterError("tensor record: dimension exceeds u32");
    std::string out;
    out.reserve(4 + 1 + 8 + m.size() * 8);
    out.append(kMagic, 4);
    out.push_back(static_cast<char>(kVersion));
    put_u32_le(out, static_cast<std::uint32_t>(m.rows()));
    put_u32_le(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values())
        put_f64_le(out, v);
    return out;
}

void write_tensor_record(std::ostream& out, const Matrix& m) {
    std::string bytes = tensor_record_bytes(m);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Matrix read_tensor_record(std::istream& in) {
    unsigned char head[13];
    in.read(reinterpret_cast<char*>(head), sizeof(head));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(head)))
        throw IntegrityError("tensor record: truncated header");
    if (std::memcmp(head, kMagic, 4) != 0)
        throw IntegrityError("tensor record: bad magic");
    if (head[4] != kVersion)
        throw FormatVersionError("tensor record: unsupported version " +
                                 std::to_string(static_cast<int>(head[4])));
    const std::uint32_t rows = get_u32_le(head + 5);
    const std::uint32_t cols = get_u32_le(head + 9);
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    std::vector<unsigned char> payload(count * 8);
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
    if (in.gcount() != static_cast<std::streamsize>(payload.size()))
        throw IntegrityError("tensor record: payload shorter than declared shape");
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i)
        values[i] = get_f64_le(&payload[i * 8]);
    return Matrix(rows, cols, std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw MissingFileError("cannot open for write: " + path.string());
    write_tensor_record(out, m);
    if (!out) throw IntegrityError("short write: " + path.string());
}

Matrix load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError("missing tensor file: " + path.string());
    Matrix m = read_tensor_record(in);
    // trailing garbage means the file is not a single record
    in.peek();
    if (!in.eof())
        throw IntegrityError("tensor record: trailing bytes in " + path.string());
    return m;
}

} // namespace mta
