#include "mta/profiling.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "json_util.hpp"

#include "mta/tensor.hpp"

namespace mta {

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!cur.empty()) {
                tokens.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

HashingEncoder::HashingEncoder(EncoderConfig cfg) : cfg_(cfg) {
    if (cfg_.dim == 0) throw ParameterError("encoder: dim must be >= 1");
    if (cfg_.max_ngram == 0 || cfg_.max_ngram > 2)
        throw ParameterError("encoder: max_ngram must be 1 or 2");
}

std::vector<double> HashingEncoder::encode(std::string_view text) const {
    const std::vector<std::string> tokens = tokenize(text);
    if (tokens.empty())
        throw DataError("encoder: cannot encode empty text");
    std::vector<double> acc(cfg_.dim, 0.0);
    auto add = [&](const std::string& feature) {
        // fnv1a alone avalanches poorly on short strings; finish with mix64
        const std::uint64_t h = mix64(fnv1a64(feature));
        const std::size_t bucket = static_cast<std::size_t>(h % cfg_.dim);
        acc[bucket] += (h >> 63) ? -1.0 : 1.0;
    };
    for (const auto& t : tokens) add(t);
    if (cfg_.max_ngram >= 2) {
        for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
            add(tokens[i] + '\x1f' + tokens[i + 1]);
    }
    double norm2 = 0.0;
    for (double v : acc) norm2 += v * v;
    if (norm2 == 0.0) {
        // signs can cancel a whole text; fall back to one deterministic bucket
        const std::uint64_t h = mix64(fnv1a64(text));
        acc.assign(cfg_.dim, 0.0);
        acc[static_cast<std::size_t>(h % cfg_.dim)] = 1.0;
        return acc;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : acc) v *= inv;
    return acc;
}

TargetValue TargetValue::of(double v) {
    TargetValue t;
    t.kind = Kind::number;
    t.number = v;
    return t;
}

TargetValue TargetValue::of(std::string v) {
    TargetValue t;
    t.kind = Kind::text;
    t.text = std::move(v);
    return t;
}

ProfileEmbedding profile_embedding(const UserRecord& user, const TextEncoder& enc) {
    if (user.history.empty())
        throw DataError("profile_embedding: user '" + user.user_id +
                        "' has an empty history");
    std::vector<double> mean(enc.dim(), 0.0);
    for (const auto& item : user.history) {
        const std::vector<double> e = enc.encode(item.text);
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += e[i];
    }
    const double inv = 1.0 / static_cast<double>(user.history.size());
    for (double& v : mean) v *= inv;
    return mean; // deliberately not re-normalized
}

ProfileEmbedding retrieval_embedding(const UserRecord& user, const TextEncoder& enc) {
    if (user.history.empty())
        throw DataError("retrieval_embedding: user '" + user.user_id +
                        "' has an empty history");
    std::string joined;
    for (std::size_t i = 0; i < user.history.size(); ++i) {
        if (i > 0) joined.push_back('\n');
        joined += user.history[i].text;
    }
    return enc.encode(joined);
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw ShapeError("cosine_similarity: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw DataError("cosine_similarity: zero-norm vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

TargetValue target_from_json(const ojson& j) {
    if (j.is_number()) return TargetValue::of(j.get<double>());
    if (j.is_string()) return TargetValue::of(j.get<std::string>());
    throw DataError("corpus: target must be a number or a string");
}

ojson target_to_json(const TargetValue& t) {
    if (t.kind == TargetValue::Kind::text) return t.text;
    // integral numbers stay integers in the file
    if (std::floor(t.number) == t.number &&
        std::fabs(t.number) < 9.007199254740992e15)
        return static_cast<std::int64_t>(t.number);
    return t.number;
}

} // namespace

std::vector<UserRecord> load_corpus(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    std::vector<UserRecord> users;
    std::set<std::string> seen;
    std::size_t lineno = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(start, end - start);
        start = end + 1;
        ++lineno;
        if (line.empty()) continue;
        const ojson j = parse_json(line, path.string() + ":" + std::to_string(lineno));
        UserRecord u;
        try {
            u.user_id = j.at("user_id").get<std::string>();
            for (const auto& h : j.at("history")) {
                HistoryItem item;
                item.text = h.at("text").get<std::string>();
                if (h.contains("target")) item.target = target_from_json(h["target"]);
                u.history.push_back(std::move(item));
            }
            if (j.contains("queries")) {
                for (const auto& q : j["queries"]) {
                    QueryItem item;
                    if (q.contains("features"))
                        item.features = q["features"].get<std::vector<double>>();
                    if (q.contains("text"))
                        item.text = q["text"].get<std::string>();
                    if (q.contains("target")) item.target = target_from_json(q["target"]);
                    u.queries.push_back(std::move(item));
                }
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " +
                            e.what());
        }
        if (u.user_id.empty())
            throw DataError(path.string() + ":" + std::to_string(lineno) +
                            ": empty user_id");
        if (!seen.insert(u.user_id).second)
            throw DataError(path.string() + ": duplicate user_id '" + u.user_id + "'");
        for (const auto& item : u.history)
            if (item.text.empty())
                throw DataError(path.string() + ": user '" + u.user_id +
                                "' has an empty history text");
        users.push_back(std::move(u));
    }
    return users;
}

void save_corpus(const std::filesystem::path& path,
                 const std::vector<UserRecord>& users) {
    std::string out;
    for (const auto& u : users) {
        ojson j;
        j["user_id"] = u.user_id;
        j["history"] = ojson::array();
        for (const auto& item : u.history) {
            ojson h;
            h["text"] = item.text;
            if (item.target.kind != TargetValue::Kind::none)
                h["target"] = target_to_json(item.target);
            j["history"].push_back(std::move(h));
        }
        j["queries"] = ojson::array();
        for (const auto& q : u.queries) {
            ojson qj;
            if (q.features) qj["features"] = *q.features;
            if (!q.text.empty()) qj["text"] = q.text;
            if (q.target.kind != TargetValue::Kind::none)
                qj["target"] = target_to_json(q.target);
            j["queries"].push_back(std::move(qj));
        }
        out += j.dump();
        out.push_back('\n');
    }
    write_text_file(path, out);
}

const UserRecord& find_user(const std::vector<UserRecord>& corpus,
                            const std::string& user_id) {
    for (const auto& u : corpus)
        if (u.user_id == user_id) return u;
    throw DataError("unknown user id: " + user_id);
}

} // namespace mta
