#include "mta/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json_util.hpp"

namespace mta {

void LoraModule::validate_against(const std::vector<LayerDims>& dims) const {
    if (layers.size() != dims.size())
        throw ShapeError("adapter '" + label + "': layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& lay = layers[l];
        if (lay.a.rows() != rank || lay.a.cols() != dims[l].in ||
            lay.b.rows() != dims[l].out || lay.b.cols() != rank)
            throw ShapeError("adapter '" + label + "': bad factor shape at layer " +
                             std::to_string(l));
    }
}

LoraModule init_lora(const std::vector<LayerDims>& dims, std::size_t rank,
                     std::string label, SeededRng& rng) {
    if (rank == 0) throw ParameterError("init_lora: rank must be >= 1");
    if (dims.empty()) throw ParameterError("init_lora: no layers");
    LoraModule m;
    m.label = std::move(label);
    m.rank = rank;
    m.layers.reserve(dims.size());
    for (const auto& d : dims) {
        if (d.in == 0 || d.out == 0)
            throw ParameterError("init_lora: zero layer dimension");
        const double bound = 1.0 / std::sqrt(static_cast<double>(d.in));
        LoraLayer lay;
        lay.a = uniform_matrix(rank, d.in, -bound, bound, rng);
        lay.b = Matrix(d.out, rank); // zero: the fresh module is a no-op
        m.layers.push_back(std::move(lay));
    }
    return m;
}

Matrix lora_delta(const LoraLayer& layer) {
    return matmul(layer.b, layer.a);
}

MergeMode merge_mode_from_string(const std::string& s) {
    if (s == "factor") return MergeMode::factor;
    if (s == "delta") return MergeMode::delta;
    throw ParameterError("unknown merge mode: " + s);
}

std::string to_string(MergeMode m) {
    return m == MergeMode::factor ? "factor" : "delta";
}

void MergeSpec::validate() const {
    const std::size_t k = anchor_ids.size();
    if (k == 0) throw ParameterError("merge spec: no anchors");
    if (similarities.size() != k || coefficients.size() != k)
        throw ParameterError("merge spec: misaligned fields");
    double sum = 0.0;
    for (double c : coefficients) {
        if (!(c >= 0.0)) throw ParameterError("merge spec: negative coefficient");
        sum += c;
    }
    if (std::fabs(sum - 1.0) > 1e-12)
        throw ParameterError("merge spec: coefficients do not sum to 1");
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j)
            if (anchor_ids[i] == anchor_ids[j])
                throw ParameterError("merge spec: duplicate anchor id " + anchor_ids[i]);
}

namespace {

// order anchors by id so summation order never depends on retrieval order
std::vector<std::size_t> canonical_order(const std::vector<std::string>& ids) {
    std::vector<std::size_t> idx(ids.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t p, std::size_t q) { return ids[p] < ids[q]; });
    return idx;
}

Matrix scaled_copy(double alpha, const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i)
        out.values()[i] = alpha * m.values()[i];
    return out;
}

void check_same_layers(const std::vector<LoraModule>& modules) {
    for (std::size_t i = 1; i < modules.size(); ++i) {
        if (modules[i].layers.size() != modules[0].layers.size())
            throw ShapeError("merge: modules disagree on layer count");
        for (std::size_t l = 0; l < modules[0].layers.size(); ++l) {
            const auto& x = modules[0].layers[l];
            const auto& y = modules[i].layers[l];
            if (x.a.cols() != y.a.cols() || x.b.rows() != y.b.rows())
                throw ShapeError("merge: modules disagree on layer dims");
        }
    }
}

LoraModule merge_factor(const std::vector<LoraModule>& modules,
                        const std::vector<double>& coeffs,
                        const std::vector<std::size_t>& order) {
    for (const auto& m : modules)
        if (m.rank != modules[0].rank)
            throw ShapeError("factor merge requires equal ranks");
    LoraModule out;
    out.label = "merged";
    out.rank = modules[0].rank;
    const std::size_t nlayers = modules[0].layers.size();
    out.layers.resize(nlayers);
    for (std::size_t l = 0; l < nlayers; ++l) {
        Matrix acc_a = scaled_copy(coeffs[order[0]], modules[order[0]].layers[l].a);
        Matrix acc_b = scaled_copy(coeffs[order[0]], modules[order[0]].layers[l].b);
        for (std::size_t t = 1; t < order.size(); ++t) {
            const std::size_t i = order[t];
            acc_a = scale_add(1.0, acc_a, coeffs[i], modules[i].layers[l].a);
            acc_b = scale_add(1.0, acc_b, coeffs[i], modules[i].layers[l].b);
        }
        out.layers[l].a = std::move(acc_a);
        out.layers[l].b = std::move(acc_b);
    }
    return out;
}

// delta-level merge, kept factored: stack the a rows unscaled and the b
// columns scaled, so b'*a' = sum_i alpha_i * (b_i * a_i) exactly in algebra
LoraModule merge_delta(const std::vector<LoraModule>& modules,
                       const std::vector<double>& coeffs,
                       const std::vector<std::size_t>& order) {
    LoraModule out;
    out.label = "merged";
    std::size_t total_rank = 0;
    for (const auto& m : modules) total_rank += m.rank;
    out.rank = total_rank;
    const std::size_t nlayers = modules[0].layers.size();
    out.layers.resize(nlayers);
    for (std::size_t l = 0; l < nlayers; ++l) {
        const std::size_t d_in = modules[0].layers[l].a.cols();
        const std::size_t d_out = modules[0].layers[l].b.rows();
        Matrix a(total_rank, d_in);
        Matrix b(d_out, total_rank);
        std::size_t row0 = 0;
        for (std::size_t t = 0; t < order.size(); ++t) {
            const std::size_t i = order[t];
            const auto& src = modules[i].layers[l];
            for (std::size_t r = 0; r < src.a.rows(); ++r)
                for (std::size_t c = 0; c < d_in; ++c)
                    a(row0 + r, c) = src.a(r, c);
            for (std::size_t r = 0; r < d_out; ++r)
                for (std::size_t c = 0; c < src.b.cols(); ++c)
                    b(r, row0 + c) = coeffs[i] * src.b(r, c);
            row0 += modules[i].rank;
        }
        out.layers[l].a = std::move(a);
        out.layers[l].b = std::move(b);
    }
    return out;
}

} // namespace

LoraModule merge(const std::vector<LoraModule>& modules, const MergeSpec& spec) {
    spec.validate();
    if (modules.size() != spec.anchor_ids.size())
        throw ParameterError("merge: module count does not match spec");
    check_same_layers(modules);
    const auto order = canonical_order(spec.anchor_ids);
    if (spec.mode == MergeMode::factor)
        return merge_factor(modules, spec.coefficients, order);
    return merge_delta(modules, spec.coefficients, order);
}

LoraModule merge_pair(const LoraModule& first, const LoraModule& second,
                      const MergeSpec& spec) {
    spec.validate();
    if (spec.anchor_ids.size() != 2)
        throw ParameterError("merge_pair: spec must describe exactly two anchors");
    std::vector<LoraModule> pair{first, second};
    check_same_layers(pair);
    // same canonical id order as the generalized path
    const bool swap = spec.anchor_ids[1] < spec.anchor_ids[0];
    const LoraModule& lo = swap ? second : first;
    const LoraModule& hi = swap ? first : second;
    const double c_lo = swap ? spec.coefficients[1] : spec.coefficients[0];
    const double c_hi = swap ? spec.coefficients[0] : spec.coefficients[1];

    LoraModule out;
    out.label = "merged";
    if (spec.mode == MergeMode::factor) {
        if (lo.rank != hi.rank) throw ShapeError("factor merge requires equal ranks");
        out.rank = lo.rank;
        out.layers.resize(lo.layers.size());
        for (std::size_t l = 0; l < lo.layers.size(); ++l) {
            out.layers[l].a = scale_add(c_lo, lo.layers[l].a, c_hi, hi.layers[l].a);
            out.layers[l].b = scale_add(c_lo, lo.layers[l].b, c_hi, hi.layers[l].b);
        }
        return out;
    }
    out.rank = lo.rank + hi.rank;
    out.layers.resize(lo.layers.size());
    for (std::size_t l = 0; l < lo.layers.size(); ++l) {
        const std::size_t d_in = lo.layers[l].a.cols();
        const std::size_t d_out = lo.layers[l].b.rows();
        Matrix a(out.rank, d_in);
        Matrix b(d_out, out.rank);
        for (std::size_t r = 0; r < lo.rank; ++r)
            for (std::size_t c = 0; c < d_in; ++c)
                a(r, c) = lo.layers[l].a(r, c);
        for (std::size_t r = 0; r < hi.rank; ++r)
            for (std::size_t c = 0; c < d_in; ++c)
                a(lo.rank + r, c) = hi.layers[l].a(r, c);
        for (std::size_t r = 0; r < d_out; ++r) {
            for (std::size_t c = 0; c < lo.rank; ++c)
                b(r, c) = c_lo * lo.layers[l].b(r, c);
            for (std::size_t c = 0; c < hi.rank; ++c)
                b(r, lo.rank + c) = c_hi * hi.layers[l].b(r, c);
        }
        out.layers[l].a = std::move(a);
        out.layers[l].b = std::move(b);
    }
    return out;
}

void save_adapter(const std::filesystem::path& dir, const LoraModule& m) {
    std::filesystem::create_directories(dir);
    ojson manifest;
    manifest["version"] = 1;
    manifest["label"] = m.label;
    manifest["rank"] = m.rank;
    manifest["layers"] = ojson::array();
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const std::string an = "layer" + std::to_string(l) + "_a.mtat";
        const std::string bn = "layer" + std::to_string(l) + "_b.mtat";
        save_tensor(dir / an, m.layers[l].a);
        save_tensor(dir / bn, m.layers[l].b);
        manifest["layers"].push_back({{"a", an}, {"b", bn}});
    }
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

LoraModule load_adapter(const std::filesystem::path& dir) {
    const ojson manifest = read_json_file(dir / "manifest.json");
    check_version(manifest, "adapter manifest");
    LoraModule m;
    try {
        m.label = manifest.at("label").get<std::string>();
        m.rank = manifest.at("rank").get<std::size_t>();
        for (const auto& lay : manifest.at("layers")) {
            LoraLayer l;
            l.a = load_tensor(dir / lay.at("a").get<std::string>());
            l.b = load_tensor(dir / lay.at("b").get<std::string>());
            m.layers.push_back(std::move(l));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("adapter manifest: " + std::string(e.what()));
    }
    for (const auto& lay : m.layers)
        if (lay.a.rows() != m.rank || lay.b.cols() != m.rank)
            throw IntegrityError("adapter: tensor rank disagrees with manifest");
    return m;
}

} // namespace mta
