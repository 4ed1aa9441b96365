#include "mta/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include "json_util.hpp"

#include "mta/featurize.hpp"

namespace mta {

// ----- metrics -----

namespace {

void check_paired(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw ParameterError(std::string(what) + ": length mismatch");
    if (a == 0) throw ParameterError(std::string(what) + ": empty inputs");
}

} // namespace

double accuracy(const std::vector<std::size_t>& pred,
                const std::vector<std::size_t>& gold) {
    check_paired(pred.size(), gold.size(), "accuracy");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == gold[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double macro_f1(const std::vector<std::size_t>& pred,
                const std::vector<std::size_t>& gold,
                std::size_t num_classes) {
    check_paired(pred.size(), gold.size(), "macro_f1");
    if (num_classes == 0) throw ParameterError("macro_f1: num_classes must be >= 1");
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] >= num_classes || gold[i] >= num_classes)
            throw IndexError("macro_f1: class index outside [0, num_classes)");
        if (pred[i] == gold[i]) {
            ++tp[pred[i]];
        } else {
            ++fp[pred[i]];
            ++fn[gold[i]];
        }
    }
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (tp[c] + fp[c] + fn[c] == 0) continue; // absent everywhere: excluded
        ++present;
        const double p = tp[c] + fp[c] ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
        const double r = tp[c] + fn[c] ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
        sum += (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
    }
    if (present == 0) throw ParameterError("macro_f1: no class present");
    return sum / static_cast<double>(present);
}

double mae(const std::vector<double>& pred, const std::vector<double>& gold) {
    check_paired(pred.size(), gold.size(), "mae");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        acc += std::fabs(pred[i] - gold[i]);
    return acc / static_cast<double>(pred.size());
}

double rmse(const std::vector<double>& pred, const std::vector<double>& gold) {
    check_paired(pred.size(), gold.size(), "rmse");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - gold[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

namespace {

double overlap_f(double overlap, std::size_t cand_len, std::size_t ref_len) {
    if (cand_len == 0) return 0.0;
    const double p = overlap / static_cast<double>(cand_len);
    const double r = overlap / static_cast<double>(ref_len);
    return (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
}

} // namespace

double rouge1_f(std::string_view candidate, std::string_view reference) {
    const auto cand = tokenize(candidate);
    const auto ref = tokenize(reference);
    if (ref.empty()) throw ParameterError("rouge: empty reference");
    if (cand.empty()) return 0.0;
    std::map<std::string, std::size_t> ref_counts;
    for (const auto& t : ref) ++ref_counts[t];
    double overlap = 0.0; // candidate counts clipped against the reference
    for (const auto& t : cand) {
        auto it = ref_counts.find(t);
        if (it != ref_counts.end() && it->second > 0) {
            --it->second;
            overlap += 1.0;
        }
    }
    return overlap_f(overlap, cand.size(), ref.size());
}

double rougeL_f(std::string_view candidate, std::string_view reference) {
    const auto cand = tokenize(candidate);
    const auto ref = tokenize(reference);
    if (ref.empty()) throw ParameterError("rouge: empty reference");
    if (cand.empty()) return 0.0;
    // classic O(m*n) LCS table, rolling rows
    std::vector<std::size_t> prev(ref.size() + 1, 0), cur(ref.size() + 1, 0);
    for (std::size_t i = 1; i <= cand.size(); ++i) {
        for (std::size_t j = 1; j <= ref.size(); ++j) {
            if (cand[i - 1] == ref[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return overlap_f(static_cast<double>(prev[ref.size()]), cand.size(), ref.size());
}

// ----- synthetic corpora -----

void SyntheticSpec::validate() const {
    if (n_clusters == 0 || users_per_cluster == 0 || query_count == 0 ||
        history_len_min == 0 || feature_dim == 0)
        throw ParameterError("synthetic spec: all counts must be >= 1");
    if (history_len_max < history_len_min)
        throw ParameterError("synthetic spec: history_len range inverted");
    if (!(cluster_separation > 0.0))
        throw ParameterError("synthetic spec: separation must be > 0");
    if (user_noise < 0.0)
        throw ParameterError("synthetic spec: user_noise must be >= 0");
    if (num_classes < 2)
        throw ParameterError("synthetic spec: num_classes must be >= 2");
    if (task == TaskKind::generation && num_classes > 8)
        throw ParameterError("synthetic spec: generation supports at most 8 classes");
}

namespace {

constexpr std::size_t kTopicWords = 6;
constexpr std::size_t kUserWords = 2;
constexpr std::size_t kNoiseWords = 12;
constexpr std::size_t kExtraTokens = 4;
constexpr double kUserWordWeight = 0.5;
constexpr double kLabelMargin = 2.0;

std::string user_name(std::size_t cluster, std::size_t idx) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "c%zu_u%04zu", cluster, idx);
    return std::string(buf);
}

TargetValue make_target(std::size_t label, TaskKind task) {
    switch (task) {
        case TaskKind::classification:
            return TargetValue::of(static_cast<double>(label));
        case TaskKind::rating:
            return TargetValue::of(static_cast<double>(label % 5 + 1));
        case TaskKind::generation:
            return TargetValue::of(generation_phrase(label));
    }
    throw ParameterError("bad task kind value");
}

} // namespace

std::vector<UserRecord> generate_corpus(const SyntheticSpec& spec) {
    spec.validate();
    SeededRng rng(spec.seed);

    const std::size_t n_content = 2 * spec.num_classes;
    std::vector<std::string> content(n_content);
    for (std::size_t k = 0; k < n_content; ++k)
        content[k] = "item" + std::to_string(k);
    std::vector<std::string> noise(kNoiseWords);
    for (std::size_t k = 0; k < kNoiseWords; ++k)
        noise[k] = "noise" + std::to_string(k);

    // cluster label tables: balanced round-robin over a shuffled content order
    std::vector<std::vector<std::size_t>> cluster_label(spec.n_clusters);
    for (std::size_t v = 0; v < spec.n_clusters; ++v) {
        std::vector<std::size_t> perm(n_content);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        cluster_label[v].assign(n_content, 0);
        for (std::size_t i = 0; i < n_content; ++i)
            cluster_label[v][perm[i]] = i % spec.num_classes;
    }

    const std::size_t sparse_users =
        std::max<std::size_t>(1, spec.users_per_cluster / 3);

    std::vector<UserRecord> corpus;
    for (std::size_t v = 0; v < spec.n_clusters; ++v) {
        std::vector<std::string> topics(kTopicWords);
        for (std::size_t k = 0; k < kTopicWords; ++k)
            topics[k] = "c" + std::to_string(v) + "topic" + std::to_string(k);

        for (std::size_t ui = 0; ui < spec.users_per_cluster; ++ui) {
            UserRecord user;
            user.user_id = user_name(v, ui);

            // the user's own label map: cluster logits plus scaled noise
            std::vector<std::size_t> label(n_content);
            for (std::size_t k = 0; k < n_content; ++k) {
                std::size_t best = 0;
                double best_score = -1e300;
                for (std::size_t c = 0; c < spec.num_classes; ++c) {
                    double score = (c == cluster_label[v][k]) ? kLabelMargin : 0.0;
                    score += spec.user_noise * rng.approx_normal();
                    if (score > best_score) {
                        best_score = score;
                        best = c;
                    }
                }
                label[k] = best;
            }

            std::vector<std::string> user_words(kUserWords);
            for (std::size_t k = 0; k < kUserWords; ++k)
                user_words[k] = "u" + std::to_string(v) + "x" +
                                std::to_string(ui) + "pref" + std::to_string(k);

            // sparse users sit at the minimum history length; the rest climb
            // toward the maximum and become anchor material
            std::size_t hist_len = spec.history_len_min;
            if (ui >= sparse_users && spec.users_per_cluster > sparse_users) {
                const double t = static_cast<double>(ui - sparse_users + 1) /
                                 static_cast<double>(spec.users_per_cluster - sparse_users);
                hist_len = spec.history_len_min +
                           static_cast<std::size_t>(std::llround(
                               t * static_cast<double>(spec.history_len_max -
                                                       spec.history_len_min)));
            }

            // the content word appears twice so it stays the dominant
            // feature after hashing; the mixture tail drives clustering
            auto make_text = [&](std::size_t content_idx) {
                std::string text = content[content_idx];
                text.push_back(' ');
                text += content[content_idx];
                const double total =
                    spec.cluster_separation + kUserWordWeight + spec.user_noise;
                for (std::size_t t = 0; t < kExtraTokens; ++t) {
                    const double r = rng.next_double() * total;
                    text.push_back(' ');
                    if (r < spec.cluster_separation)
                        text += topics[rng.uniform_index(kTopicWords)];
                    else if (r < spec.cluster_separation + kUserWordWeight)
                        text += user_words[rng.uniform_index(kUserWords)];
                    else
                        text += noise[rng.uniform_index(kNoiseWords)];
                }
                return text;
            };

            for (std::size_t i = 0; i < hist_len; ++i) {
                const std::size_t k = rng.uniform_index(n_content);
                HistoryItem item;
                item.text = make_text(k);
                item.target = make_target(label[k], spec.task);
                user.history.push_back(std::move(item));
            }
            for (std::size_t i = 0; i < spec.query_count; ++i) {
                const std::size_t k = rng.uniform_index(n_content);
                QueryItem q;
                q.features = featurize_text(make_text(k), spec.feature_dim);
                q.target = make_target(label[k], spec.task);
                user.queries.push_back(std::move(q));
            }
            corpus.push_back(std::move(user));
        }
    }
    return corpus;
}

std::vector<std::string> default_test_ids(const std::vector<UserRecord>& corpus,
                                          std::size_t count) {
    if (count == 0 || count > corpus.size())
        throw ParameterError("default_test_ids: bad count");
    std::vector<const UserRecord*> users;
    for (const auto& u : corpus) users.push_back(&u);
    std::sort(users.begin(), users.end(),
              [](const UserRecord* a, const UserRecord* b) {
                  if (a->history.size() != b->history.size())
                      return a->history.size() < b->history.size();
                  return a->user_id < b->user_id;
              });
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < count; ++i) ids.push_back(users[i]->user_id);
    return ids;
}

// ----- evaluation drivers -----

namespace {

std::string fmt_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

std::vector<std::pair<std::string, std::string>> echo_config(
    const PersonalizationConfig& cfg, std::size_t bank_clusters) {
    std::vector<std::pair<std::string, std::string>> e;
    e.emplace_back("task", to_string(cfg.task));
    e.emplace_back("clusters", std::to_string(bank_clusters));
    e.emplace_back("top_k", std::to_string(cfg.top_k));
    e.emplace_back("merge_mode", to_string(cfg.merge_mode));
    e.emplace_back("sim_floor", fmt_double(cfg.sim_floor));
    e.emplace_back("stacked_rank", std::to_string(cfg.stacked.rank));
    e.emplace_back("stacked_epochs", std::to_string(cfg.stacked.epochs));
    e.emplace_back("lr", fmt_double(cfg.stacked.lr));
    e.emplace_back("lr_scale", fmt_double(cfg.stacked.lr_scale));
    e.emplace_back("batch_size", std::to_string(cfg.stacked.batch_size));
    e.emplace_back("grad_accum", std::to_string(cfg.stacked.grad_accum));
    if (cfg.alpha_fixed) e.emplace_back("alpha_fixed", fmt_double(*cfg.alpha_fixed));
    return e;
}

struct QueryOutcome {
    // one slot per query, task decides which pair is meaningful
    std::vector<std::size_t> pred_cls, gold_cls;
    std::vector<double> pred_val, gold_val;
    std::vector<std::string> pred_text, gold_text;
};

std::vector<std::pair<std::string, double>> outcome_metrics(
    const QueryOutcome& o, TaskKind task, std::size_t num_classes) {
    std::vector<std::pair<std::string, double>> m;
    switch (task) {
        case TaskKind::classification:
            m.emplace_back("accuracy", accuracy(o.pred_cls, o.gold_cls));
            m.emplace_back("macro_f1", macro_f1(o.pred_cls, o.gold_cls, num_classes));
            break;
        case TaskKind::rating:
            m.emplace_back("mae", mae(o.pred_val, o.gold_val));
            m.emplace_back("rmse", rmse(o.pred_val, o.gold_val));
            break;
        case TaskKind::generation: {
            double r1 = 0.0, rl = 0.0;
            for (std::size_t i = 0; i < o.pred_text.size(); ++i) {
                r1 += rouge1_f(o.pred_text[i], o.gold_text[i]);
                rl += rougeL_f(o.pred_text[i], o.gold_text[i]);
            }
            const double n = static_cast<double>(o.pred_text.size());
            m.emplace_back("rouge1", r1 / n);
            m.emplace_back("rougeL", rl / n);
            break;
        }
    }
    return m;
}

void append_outcome(QueryOutcome& into, const QueryOutcome& from) {
    into.pred_cls.insert(into.pred_cls.end(), from.pred_cls.begin(), from.pred_cls.end());
    into.gold_cls.insert(into.gold_cls.end(), from.gold_cls.begin(), from.gold_cls.end());
    into.pred_val.insert(into.pred_val.end(), from.pred_val.begin(), from.pred_val.end());
    into.gold_val.insert(into.gold_val.end(), from.gold_val.begin(), from.gold_val.end());
    into.pred_text.insert(into.pred_text.end(), from.pred_text.begin(), from.pred_text.end());
    into.gold_text.insert(into.gold_text.end(), from.gold_text.begin(), from.gold_text.end());
}

// scores one user's queries given a ready prediction function
template <typename PredictFn>
QueryOutcome score_queries(const UserRecord& user, TaskKind task,
                           std::size_t input_dim, std::size_t num_classes,
                           PredictFn&& pred_fn) {
    if (user.queries.empty())
        throw DataError("user '" + user.user_id + "' has no queries to evaluate");
    QueryOutcome o;
    for (const auto& q : user.queries) {
        if (q.target.kind == TargetValue::Kind::none)
            throw DataError("user '" + user.user_id +
                            "': query without target during evaluation");
        const std::vector<double> x = query_features(q, input_dim);
        const double raw = pred_fn(x);
        const double gold = target_to_example(q.target, task, num_classes);
        switch (task) {
            case TaskKind::classification:
                o.pred_cls.push_back(static_cast<std::size_t>(raw));
                o.gold_cls.push_back(static_cast<std::size_t>(gold));
                break;
            case TaskKind::rating:
                o.pred_val.push_back(raw);
                o.gold_val.push_back(gold);
                break;
            case TaskKind::generation:
                o.pred_text.push_back(generation_phrase(static_cast<std::size_t>(raw)));
                o.gold_text.push_back(q.target.text);
                break;
        }
    }
    return o;
}

enum class Variant { adapt_only, merged_only, full };

MetricsReport evaluate_variant(const LoraBank& bank, const BackboneModel& base,
                               const std::vector<UserRecord>& corpus,
                               const std::vector<std::string>& test_ids,
                               const PersonalizationConfig& cfg,
                               std::uint64_t seed, Variant variant) {
    if (test_ids.empty()) throw ParameterError("evaluate: no test users");
    cfg.validate();
    for (const auto& id : test_ids)
        if (bank.is_anchor(id))
            throw ContaminationError("test user '" + id + "' is a bank anchor");
    {
        std::set<std::string> dedup(test_ids.begin(), test_ids.end());
        if (dedup.size() != test_ids.size())
            throw ParameterError("evaluate: duplicate test ids");
    }

    PersonalizationConfig vcfg = cfg;
    if (variant == Variant::merged_only) vcfg.stacked.epochs = 0;

    const std::size_t input_dim = base.config().input_dim;
    const std::size_t num_classes = base.config().num_classes;
    const SeededRng master(seed);

    MetricsReport report;
    report.task = cfg.task;
    report.seed = seed;
    report.config_echo = echo_config(vcfg, bank.config.clusters);

    QueryOutcome pooled;
    for (const auto& id : test_ids) {
        const UserRecord& user = find_user(corpus, id);
        SeededRng rng = master.derive(id);
        QueryOutcome o;
        if (variant == Variant::adapt_only) {
            // few-shot adapter straight on the raw base, no merge stage
            const BackboneModel frozen = base.frozen_copy();
            const auto examples =
                examples_from_history(user, vcfg.task, input_dim, num_classes);
            LoraModule init = init_lora(layer_dims(base.config()), vcfg.stacked.rank,
                                        "stacked:" + id, rng);
            TrainResult trained =
                train_adapter(frozen, {}, std::move(init), examples, vcfg.stacked,
                              rng, loss_for(vcfg.task));
            PersonalizedModel pm;
            pm.user_id = id;
            pm.task = vcfg.task;
            pm.model = frozen;
            pm.stacked = std::move(trained.adapter);
            o = score_queries(user, vcfg.task, input_dim, num_classes,
                              [&](const std::vector<double>& x) {
                                  return predict(pm, x);
                              });
        } else {
            PersonalizedModel pm = personalize_user(bank, base, user, vcfg, rng);
            o = score_queries(user, vcfg.task, input_dim, num_classes,
                              [&](const std::vector<double>& x) {
                                  return predict(pm, x);
                              });
        }
        UserMetrics um;
        um.user_id = id;
        um.n_queries = user.queries.size();
        um.metrics = outcome_metrics(o, vcfg.task, num_classes);
        report.per_user.push_back(std::move(um));
        append_outcome(pooled, o);
    }
    report.metrics = outcome_metrics(pooled, cfg.task, num_classes);
    return report;
}

} // namespace

MetricsReport evaluate_users(const LoraBank& bank, const BackboneModel& base,
                             const std::vector<UserRecord>& corpus,
                             const std::vector<std::string>& test_ids,
                             const PersonalizationConfig& cfg,
                             std::uint64_t seed) {
    return evaluate_variant(bank, base, corpus, test_ids, cfg, seed, Variant::full);
}

AblationReport run_ablation(const std::vector<UserRecord>& corpus,
                            const std::vector<std::string>& test_ids,
                            const BackboneModel& base, const BankConfig& bank_cfg,
                            const PersonalizationConfig& pers_cfg,
                            std::uint64_t seed) {
    if (test_ids.empty()) throw ParameterError("ablation: no test users");
    for (const auto& id : test_ids)
        find_user(corpus, id); // unknown ids fail before any training
    std::set<std::string> test_set(test_ids.begin(), test_ids.end());
    std::vector<UserRecord> bank_corpus;
    for (const auto& u : corpus)
        if (!test_set.count(u.user_id)) bank_corpus.push_back(u);
    if (bank_corpus.empty())
        throw DataError("ablation: no users left for bank construction");

    const LoraBank bank = build_bank(bank_corpus, base, bank_cfg);

    AblationReport r;
    r.adapt_only = evaluate_variant(bank, base, corpus, test_ids, pers_cfg, seed,
                                    Variant::adapt_only);
    r.merged_only = evaluate_variant(bank, base, corpus, test_ids, pers_cfg, seed,
                                     Variant::merged_only);
    r.full = evaluate_variant(bank, base, corpus, test_ids, pers_cfg, seed,
                              Variant::full);
    return r;
}

SweepParam sweep_param_from_string(const std::string& s) {
    if (s == "alpha_fixed") return SweepParam::alpha_fixed;
    if (s == "top_k") return SweepParam::top_k;
    if (s == "stacked_rank") return SweepParam::stacked_rank;
    throw ParameterError("unknown sweep parameter: " + s);
}

namespace {

std::string to_string(SweepParam p) {
    switch (p) {
        case SweepParam::alpha_fixed: return "alpha_fixed";
        case SweepParam::top_k: return "top_k";
        case SweepParam::stacked_rank: return "stacked_rank";
    }
    throw ParameterError("bad sweep parameter value");
}

std::size_t integral_value(double v, const char* what) {
    if (std::floor(v) != v || v < 1.0)
        throw ParameterError(std::string(what) + " sweep values must be integers >= 1");
    return static_cast<std::size_t>(v);
}

} // namespace

SweepReport sweep(const LoraBank& bank, const BackboneModel& base,
                  const std::vector<UserRecord>& corpus,
                  const std::vector<std::string>& test_ids,
                  const PersonalizationConfig& base_cfg, SweepParam param,
                  const std::vector<double>& values, std::uint64_t seed) {
    if (values.empty()) throw ParameterError("sweep: no values");
    SweepReport report;
    report.param = param;
    for (double v : values) {
        PersonalizationConfig cfg = base_cfg;
        switch (param) {
            case SweepParam::alpha_fixed:
                if (cfg.top_k != 2)
                    throw ParameterError("alpha_fixed sweep requires top_k == 2");
                if (!(v >= 0.0 && v <= 1.0))
                    throw ParameterError("alpha_fixed sweep values must lie in [0, 1]");
                cfg.alpha_fixed = v;
                break;
            case SweepParam::top_k:
                cfg.top_k = integral_value(v, "top_k");
                cfg.alpha_fixed.reset();
                break;
            case SweepParam::stacked_rank:
                cfg.stacked.rank = integral_value(v, "stacked_rank");
                break;
        }
        SweepRun run;
        run.value = v;
        run.report = evaluate_users(bank, base, corpus, test_ids, cfg, seed);
        report.runs.push_back(std::move(run));
    }
    return report;
}

// ----- report serialization -----

namespace {

ojson report_to_json(const MetricsReport& r) {
    ojson j;
    j["task"] = to_string(r.task);
    j["seed"] = r.seed;
    j["config"] = ojson::object();
    for (const auto& [k, v] : r.config_echo) j["config"][k] = v;
    j["metrics"] = ojson::object();
    for (const auto& [k, v] : r.metrics) j["metrics"][k] = v;
    j["per_user"] = ojson::array();
    for (const auto& u : r.per_user) {
        ojson uj;
        uj["user_id"] = u.user_id;
        uj["n_queries"] = u.n_queries;
        uj["metrics"] = ojson::object();
        for (const auto& [k, v] : u.metrics) uj["metrics"][k] = v;
        j["per_user"].push_back(std::move(uj));
    }
    return j;
}

} // namespace

std::string report_json(const MetricsReport& r) {
    return report_to_json(r).dump(2) + "\n";
}

std::string report_json(const AblationReport& r) {
    ojson j;
    j["variants"] = ojson::object();
    j["variants"]["adapt_only"] = report_to_json(r.adapt_only);
    j["variants"]["merged_only"] = report_to_json(r.merged_only);
    j["variants"]["full"] = report_to_json(r.full);
    return j.dump(2) + "\n";
}

std::string report_json(const SweepReport& r) {
    ojson j;
    j["param"] = to_string(r.param);
    j["runs"] = ojson::array();
    for (const auto& run : r.runs) {
        ojson rj;
        rj["value"] = run.value;
        rj["report"] = report_to_json(run.report);
        j["runs"].push_back(std::move(rj));
    }
    return j.dump(2) + "\n";
}

namespace {

std::string fmt_cell(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
}

} // namespace

std::string report_table(const MetricsReport& r) {
    std::string out;
    out += "task: " + to_string(r.task) + "  seed: " + std::to_string(r.seed) + "\n";
    for (const auto& [k, v] : r.metrics)
        out += "  " + k + std::string(k.size() < 12 ? 12 - k.size() : 1, ' ') +
               fmt_cell(v) + "\n";
    if (r.per_user.size() > 1) {
        out += "per user:\n";
        for (const auto& u : r.per_user) {
            out += "  " + u.user_id + "  n=" + std::to_string(u.n_queries);
            for (const auto& [k, v] : u.metrics)
                out += "  " + k + "=" + fmt_cell(v);
            out += "\n";
        }
    }
    return out;
}

std::string report_table(const AblationReport& r) {
    std::string out;
    out += "variant       ";
    for (const auto& [k, v] : r.full.metrics) {
        (void)v;
        out += k + std::string(k.size() < 12 ? 12 - k.size() : 1, ' ');
    }
    out += "\n";
    auto row = [&](const char* name, const MetricsReport& rep) {
        out += name;
        for (const auto& [k, v] : rep.metrics) {
            (void)k;
            out += fmt_cell(v) + "      ";
        }
        out += "\n";
    };
    row("adapt_only    ", r.adapt_only);
    row("merged_only   ", r.merged_only);
    row("full          ", r.full);
    return out;
}

std::string report_table(const SweepReport& r) {
    std::string out;
    out += "value     ";
    if (!r.runs.empty())
        for (const auto& [k, v] : r.runs[0].report.metrics) {
            (void)v;
            out += k + std::string(k.size() < 12 ? 12 - k.size() : 1, ' ');
        }
    out += "\n";
    for (const auto& run : r.runs) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%-10g", run.value);
        out += buf;
        for (const auto& [k, v] : run.report.metrics) {
            (void)k;
            out += fmt_cell(v) + "      ";
        }
        out += "\n";
    }
    return out;
}

} // namespace mta
