#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mta/errors.hpp"

namespace mta {

// lowercased, split on whitespace; shared by the text encoder and the
// overlap metrics so "token" means one thing everywhere
std::vector<std::string> tokenize(std::string_view text);

struct EncoderConfig {
    std::size_t dim = 256;
    std::size_t max_ngram = 2; // 1 = unigrams only, 2 = unigrams + bigrams
};

class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual std::size_t dim() const = 0;
    // unit L2 norm for any non-empty text; empty text is an error
    virtual std::vector<double> encode(std::string_view text) const = 0;
};

// Feature hashing over word n-grams: each n-gram hashes to one bucket with a
// sign bit taken from the same hash, counts accumulate, the vector is L2
// normalized. Deterministic, no fitted state.
class HashingEncoder : public TextEncoder {
public:
    explicit HashingEncoder(EncoderConfig cfg);
    std::size_t dim() const override { return cfg_.dim; }
    std::vector<double> encode(std::string_view text) const override;
    const EncoderConfig& config() const noexcept { return cfg_; }

private:
    EncoderConfig cfg_;
};

struct TargetValue {
    enum class Kind { none, number, text };
    Kind kind = Kind::none;
    double number = 0.0;
    std::string text;

    static TargetValue none() { return {}; }
    static TargetValue of(double v);
    static TargetValue of(std::string v);
};

struct HistoryItem {
    std::string text;
    TargetValue target;
};

struct QueryItem {
    std::optional<std::vector<double>> features; // explicit feature vector
    std::string text;                            // or raw text to featurize
    TargetValue target;
};

struct UserRecord {
    std::string user_id;
    std::vector<HistoryItem> history;
    std::vector<QueryItem> queries;
};

using ProfileEmbedding = std::vector<double>;

// clustering embedding: plain mean of the per-item encodings, not re-normalized
ProfileEmbedding profile_embedding(const UserRecord& user, const TextEncoder& enc);

// retrieval embedding: one encoding of the full history joined by single newlines
ProfileEmbedding retrieval_embedding(const UserRecord& user, const TextEncoder& enc);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// corpus file: UTF-8 JSON lines, one user per line, LF separators, unique
// non-empty user ids, non-empty history item texts
std::vector<UserRecord> load_corpus(const std::filesystem::path& path);
void save_corpus(const std::filesystem::path& path,
                 const std::vector<UserRecord>& users);

const UserRecord& find_user(const std::vector<UserRecord>& corpus,
                            const std::string& user_id);

} // namespace mta
