#include "mta/bank.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "json_util.hpp"

#include "mta/digest.hpp"
#include "mta/featurize.hpp"

namespace mta {

void BankConfig::validate() const {
    if (clusters == 0) throw ParameterError("bank: clusters must be >= 1");
    anchor_training.validate();
    if (encoder.dim == 0) throw ParameterError("bank: encoder dim must be >= 1");
}

namespace {

double sq_dist(const std::vector<double>& a, const double* b, std::size_t dim) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

std::size_t nearest_centroid(const std::vector<double>& p, const Matrix& centroids) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
        const double d = sq_dist(p, &centroids.values()[c * centroids.cols()],
                                 centroids.cols());
        if (d < best_d) { // ties keep the smaller index
            best_d = d;
            best = c;
        }
    }
    return best;
}

double total_sse(const std::vector<ProfileEmbedding>& points,
                 const std::vector<std::size_t>& assignment,
                 const Matrix& centroids) {
    double acc = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
        acc += sq_dist(points[i], &centroids.values()[assignment[i] * centroids.cols()],
                       centroids.cols());
    return acc;
}

// move one point from a cluster that can spare it into each empty cluster;
// the farthest-from-own-centroid point carries the most SSE, so this always
// lowers the objective
void repair_empty_clusters(const std::vector<ProfileEmbedding>& points,
                           std::vector<std::size_t>& assignment,
                           const Matrix& centroids, std::size_t v) {
    for (std::size_t c = 0; c < v; ++c) {
        std::vector<std::size_t> counts(v, 0);
        for (std::size_t a : assignment) ++counts[a];
        if (counts[c] != 0) continue;
        std::size_t donor = points.size();
        double worst = -1.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (counts[assignment[i]] < 2) continue;
            const double d =
                sq_dist(points[i], &centroids.values()[assignment[i] * centroids.cols()],
                        centroids.cols());
            if (d > worst) {
                worst = d;
                donor = i;
            }
        }
        if (donor == points.size())
            throw Error("kmeans: no donor point for empty cluster"); // v <= n rules this out
        assignment[donor] = c;
    }
}

void recompute_centroids(const std::vector<ProfileEmbedding>& points,
                         const std::vector<std::size_t>& assignment,
                         Matrix& centroids, std::size_t v) {
    const std::size_t dim = centroids.cols();
    std::vector<double> sums(v * dim, 0.0);
    std::vector<std::size_t> counts(v, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const std::size_t c = assignment[i];
        ++counts[c];
        for (std::size_t j = 0; j < dim; ++j)
            sums[c * dim + j] += points[i][j];
    }
    for (std::size_t c = 0; c < v; ++c) {
        if (counts[c] == 0) continue; // repaired before we get here
        const double inv = 1.0 / static_cast<double>(counts[c]);
        for (std::size_t j = 0; j < dim; ++j)
            centroids.values()[c * dim + j] = sums[c * dim + j] * inv;
    }
}

} // namespace

Clustering kmeans(const std::vector<ProfileEmbedding>& points, std::size_t v,
                  SeededRng& rng, std::size_t max_iters) {
    if (points.empty()) throw ParameterError("kmeans: no points");
    if (v == 0) throw ParameterError("kmeans: v must be >= 1");
    if (v > points.size())
        throw ParameterError("kmeans: v exceeds the number of points");
    const std::size_t dim = points[0].size();
    for (const auto& p : points)
        if (p.size() != dim) throw ShapeError("kmeans: ragged points");

    // kmeans++ seeding: first uniform, then D^2-weighted
    Matrix centroids(v, dim);
    std::vector<double> d2(points.size(), std::numeric_limits<double>::infinity());
    {
        const std::size_t first = rng.uniform_index(points.size());
        for (std::size_t j = 0; j < dim; ++j)
            centroids(0, j) = points[first][j];
    }
    for (std::size_t c = 1; c < v; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double d =
                sq_dist(points[i], &centroids.values()[(c - 1) * dim], dim);
            if (d < d2[i]) d2[i] = d;
            total += d2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            const double r = rng.next_double() * total;
            double cum = 0.0;
            for (std::size_t i = 0; i < points.size(); ++i) {
                cum += d2[i];
                if (cum > r) {
                    pick = i;
                    break;
                }
                pick = i; // fp edge: r lands on the tail
            }
        } else {
            // all remaining mass zero: duplicate points, take the first
            pick = 0;
        }
        for (std::size_t j = 0; j < dim; ++j)
            centroids(c, j) = points[pick][j];
    }

    Clustering out;
    out.centroids = std::move(centroids);
    out.assignment.assign(points.size(), 0);

    double prev_sse = std::numeric_limits<double>::infinity();
    bool converged = false;
    for (std::size_t iter = 0; iter < max_iters && !converged; ++iter) {
        std::vector<std::size_t> next(points.size());
        for (std::size_t i = 0; i < points.size(); ++i)
            next[i] = nearest_centroid(points[i], out.centroids);
        repair_empty_clusters(points, next, out.centroids, v);
        const bool unchanged = (iter > 0 && next == out.assignment);
        out.assignment = std::move(next);
        recompute_centroids(points, out.assignment, out.centroids, v);
        const double sse = total_sse(points, out.assignment, out.centroids);
        if (!out.sse_history.empty() &&
            sse > prev_sse + 1e-9 * std::max(1.0, prev_sse))
            throw Error("kmeans: SSE increased between sweeps");
        out.sse_history.push_back(sse);
        prev_sse = sse;
        out.iterations = iter + 1;
        if (unchanged) converged = true;
    }

    const auto certificate_holds = [&](const std::vector<std::size_t>& assign) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double own =
                sq_dist(points[i], &out.centroids.values()[assign[i] * dim], dim);
            for (std::size_t c = 0; c < v; ++c)
                if (sq_dist(points[i], &out.centroids.values()[c * dim], dim) < own)
                    return false;
        }
        return true;
    };

    // final assignment against the final centroids, so the local-optimum
    // certificate below holds even if the sweep budget ran out
    for (std::size_t guard = 0; guard <= v; ++guard) {
        std::vector<std::size_t> final_assign(points.size());
        for (std::size_t i = 0; i < points.size(); ++i)
            final_assign[i] = nearest_centroid(points[i], out.centroids);
        std::vector<std::size_t> counts(v, 0);
        for (std::size_t a : final_assign) ++counts[a];
        const bool has_empty =
            std::any_of(counts.begin(), counts.end(),
                        [](std::size_t n) { return n == 0; });
        if (!has_empty) {
            out.assignment = std::move(final_assign);
            break;
        }
        repair_empty_clusters(points, final_assign, out.centroids, v);
        out.assignment = final_assign;
        recompute_centroids(points, out.assignment, out.centroids, v);
        // coincident centroids tie every distance, so re-deriving from
        // nearest would undo the repair forever; a repaired split that
        // already meets the certificate is final
        if (certificate_holds(out.assignment)) break;
        if (guard == v) throw Error("kmeans: could not stabilize clusters");
    }

    if (!certificate_holds(out.assignment))
        throw Error("kmeans: local-optimum certificate violated");
    return out;
}

std::string select_anchor(const std::vector<const UserRecord*>& members) {
    if (members.empty()) throw ParameterError("select_anchor: empty cluster");
    const UserRecord* best = members[0];
    for (const UserRecord* u : members) {
        if (u->history.size() > best->history.size() ||
            (u->history.size() == best->history.size() &&
             u->user_id < best->user_id))
            best = u;
    }
    return best->user_id;
}

LoraModule train_anchor(const UserRecord& anchor, const BackboneModel& base,
                        const TrainingConfig& cfg, SeededRng rng, TaskKind task) {
    const BackboneModel frozen = base.frozen_copy();
    const auto examples = examples_from_history(
        anchor, task, base.config().input_dim, base.config().num_classes);
    LoraModule init =
        init_lora(layer_dims(base.config()), cfg.rank, anchor.user_id, rng);
    TrainResult r = train_adapter(frozen, {}, std::move(init), examples, cfg, rng,
                                  loss_for(task));
    return std::move(r.adapter);
}

std::vector<std::string> LoraBank::anchor_ids() const {
    std::vector<std::string> ids;
    ids.reserve(entries.size());
    for (const auto& e : entries) ids.push_back(e.anchor_id);
    return ids;
}

bool LoraBank::is_anchor(const std::string& user_id) const {
    for (const auto& e : entries)
        if (e.anchor_id == user_id) return true;
    return false;
}

LoraBank build_bank(const std::vector<UserRecord>& corpus,
                    const BackboneModel& base, const BankConfig& cfg) {
    cfg.validate();
    if (corpus.empty()) throw DataError("build_bank: empty corpus");
    if (cfg.clusters > corpus.size())
        throw ParameterError("build_bank: more clusters than users");

    // canonical user order by id, so the bank does not depend on line order
    std::vector<const UserRecord*> users;
    users.reserve(corpus.size());
    for (const auto& u : corpus) users.push_back(&u);
    std::sort(users.begin(), users.end(),
              [](const UserRecord* a, const UserRecord* b) {
                  return a->user_id < b->user_id;
              });

    const HashingEncoder encoder(cfg.encoder);
    std::vector<ProfileEmbedding> points;
    points.reserve(users.size());
    for (const UserRecord* u : users)
        points.push_back(profile_embedding(*u, encoder));

    const SeededRng master(cfg.seed);
    SeededRng cluster_rng = master.derive("kmeans");
    const Clustering clustering = kmeans(points, cfg.clusters, cluster_rng);

    LoraBank bank;
    bank.config = cfg;
    for (std::size_t c = 0; c < cfg.clusters; ++c) {
        std::vector<const UserRecord*> members;
        for (std::size_t i = 0; i < users.size(); ++i)
            if (clustering.assignment[i] == c) members.push_back(users[i]);
        const std::string anchor_id = select_anchor(members);
        const UserRecord& anchor = find_user(corpus, anchor_id);
        BankEntry entry;
        entry.anchor_id = anchor_id;
        entry.embedding = retrieval_embedding(anchor, encoder);
        entry.adapter = train_anchor(anchor, base, cfg.anchor_training,
                                     master.derive(anchor_id), cfg.task);
        bank.entries.push_back(std::move(entry));
    }
    return bank;
}

namespace {

// fixed-width double so the manifest byte length never depends on values:
// %.16e is 23 chars, non-negatives get a leading space (JSON inter-token
// whitespace) instead of a sign
std::string fixed_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.16e", v);
    std::string s(buf);
    if (s[0] != '-') s.insert(s.begin(), ' ');
    return s;
}

// full 17-significant-digit form for config scalars; round-trips binary64
std::string config_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

std::string json_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') {
            out.push_back('\\');
            out.push_back(c);
        } else if (static_cast<unsigned char>(c) < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof(buf), "\\u%04x", c);
            out += buf;
        } else {
            out.push_back(c);
        }
    }
    return out;
}

std::string entry_dir_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "adapters/anchor_%03zu", index);
    return std::string(buf);
}

} // namespace

void save_bank(const std::filesystem::path& dir, const LoraBank& bank) {
    std::filesystem::create_directories(dir);
    // manifest assembled by hand: embeddings need fixed-width numbers, which
    // no JSON library will emit
    std::string m;
    m += "{\n";
    m += "  \"version\": 1,\n";
    m += "  \"clusters\": " + std::to_string(bank.config.clusters) + ",\n";
    m += "  \"seed\": " + std::to_string(bank.config.seed) + ",\n";
    m += "  \"task\": \"" + to_string(bank.config.task) + "\",\n";
    m += "  \"encoder\": {\"dim\": " + std::to_string(bank.config.encoder.dim) +
         ", \"max_ngram\": " + std::to_string(bank.config.encoder.max_ngram) + "},\n";
    const TrainingConfig& t = bank.config.anchor_training;
    m += "  \"anchor_training\": {\"rank\": " + std::to_string(t.rank) +
         ", \"epochs\": " + std::to_string(t.epochs) +
         ", \"lr\": " + config_double(t.lr) +
         ", \"batch_size\": " + std::to_string(t.batch_size) +
         ", \"grad_accum\": " + std::to_string(t.grad_accum) +
         ", \"lr_scale\": " + config_double(t.lr_scale) + "},\n";
    m += "  \"entries\": [\n";
    for (std::size_t i = 0; i < bank.entries.size(); ++i) {
        const BankEntry& e = bank.entries[i];
        m += "    {\"anchor_id\": \"" + json_escape(e.anchor_id) + "\", ";
        m += "\"adapter\": \"" + entry_dir_name(i) + "\", ";
        m += "\"embedding\": [";
        for (std::size_t j = 0; j < e.embedding.size(); ++j) {
            if (j > 0) m += ",";
            m += fixed_double(e.embedding[j]);
        }
        m += "]}";
        if (i + 1 < bank.entries.size()) m += ",";
        m += "\n";
    }
    m += "  ]\n";
    m += "}\n";
    write_text_file(dir / "manifest.json", m);
    for (std::size_t i = 0; i < bank.entries.size(); ++i)
        save_adapter(dir / entry_dir_name(i), bank.entries[i].adapter);
}

LoraBank load_bank(const std::filesystem::path& dir) {
    const ojson j = read_json_file(dir / "manifest.json");
    check_version(j, "bank manifest");
    LoraBank bank;
    try {
        bank.config.clusters = j.at("clusters").get<std::size_t>();
        bank.config.seed = j.at("seed").get<std::uint64_t>();
        bank.config.task = task_from_string(j.at("task").get<std::string>());
        bank.config.encoder.dim = j.at("encoder").at("dim").get<std::size_t>();
        bank.config.encoder.max_ngram = j.at("encoder").at("max_ngram").get<std::size_t>();
        const auto& t = j.at("anchor_training");
        bank.config.anchor_training.rank = t.at("rank").get<std::size_t>();
        bank.config.anchor_training.epochs = t.at("epochs").get<std::size_t>();
        bank.config.anchor_training.lr = t.at("lr").get<double>();
        bank.config.anchor_training.batch_size = t.at("batch_size").get<std::size_t>();
        bank.config.anchor_training.grad_accum = t.at("grad_accum").get<std::size_t>();
        bank.config.anchor_training.lr_scale = t.at("lr_scale").get<double>();
        for (const auto& ej : j.at("entries")) {
            BankEntry e;
            e.anchor_id = ej.at("anchor_id").get<std::string>();
            e.embedding = ej.at("embedding").get<std::vector<double>>();
            e.adapter = load_adapter(dir / ej.at("adapter").get<std::string>());
            bank.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bank manifest: " + std::string(e.what()));
    }
    if (bank.entries.size() != bank.config.clusters)
        throw IntegrityError("bank: entry count disagrees with cluster count");
    for (const auto& e : bank.entries)
        if (e.embedding.size() != bank.config.encoder.dim)
            throw IntegrityError("bank: embedding dim disagrees with encoder");
    return bank;
}

std::string bank_checksum(const LoraBank& bank) {
    std::string bytes;
    bytes += std::to_string(bank.config.clusters) + "|" +
             std::to_string(bank.config.seed) + "|" +
             to_string(bank.config.task) + "|" +
             std::to_string(bank.config.encoder.dim) + "|" +
             std::to_string(bank.config.encoder.max_ngram) + "|";
    for (const auto& e : bank.entries) {
        bytes += e.anchor_id;
        bytes.push_back('\0');
        bytes += tensor_record_bytes(Matrix(1, e.embedding.size(), e.embedding));
        for (const auto& l : e.adapter.layers) {
            bytes += tensor_record_bytes(l.a);
            bytes += tensor_record_bytes(l.b);
        }
    }
    return sha256_hex(bytes);
}

} // namespace mta
