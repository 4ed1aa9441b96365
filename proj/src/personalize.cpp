#include "mta/personalize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json_util.hpp"

#include "mta/featurize.hpp"

namespace mta {

void PersonalizationConfig::validate() const {
    if (top_k == 0) throw ParameterError("personalize: top_k must be >= 1");
    stacked.validate();
    if (!(sim_floor > 0.0) || !std::isfinite(sim_floor))
        throw ParameterError("personalize: sim_floor must be positive");
    if (alpha_fixed) {
        if (top_k != 2)
            throw ParameterError("alpha_fixed override requires top_k == 2");
        if (!(*alpha_fixed >= 0.0 && *alpha_fixed <= 1.0))
            throw ParameterError("alpha_fixed must lie in [0, 1]");
    }
}

Retrieved retrieve_top_k(const LoraBank& bank,
                         const std::vector<double>& user_embedding,
                         std::size_t k) {
    if (k == 0) throw ParameterError("retrieve_top_k: k must be >= 1");
    if (k > bank.entries.size())
        throw ParameterError("retrieve_top_k: k exceeds the bank size");
    std::vector<double> sims(bank.entries.size());
    for (std::size_t i = 0; i < bank.entries.size(); ++i)
        sims[i] = cosine_similarity(user_embedding, bank.entries[i].embedding);
    std::vector<std::size_t> idx(bank.entries.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        return bank.entries[a].anchor_id < bank.entries[b].anchor_id;
    });
    Retrieved r;
    for (std::size_t t = 0; t < k; ++t) {
        r.anchor_ids.push_back(bank.entries[idx[t]].anchor_id);
        r.similarities.push_back(sims[idx[t]]);
    }
    return r;
}

std::vector<double> merge_coefficients(const std::vector<double>& sims,
                                       double sim_floor) {
    if (sims.empty()) throw ParameterError("merge_coefficients: no similarities");
    if (!(sim_floor > 0.0) || !std::isfinite(sim_floor))
        throw ParameterError("merge_coefficients: sim_floor must be positive");
    for (double s : sims)
        if (!std::isfinite(s))
            throw ParameterError("merge_coefficients: non-finite similarity");
    double max_abs = 0.0;
    for (double s : sims) max_abs = std::max(max_abs, std::fabs(s));
    const std::size_t k = sims.size();
    if (max_abs == 0.0) // every similarity exactly zero: nothing to weight by
        return std::vector<double>(k, 1.0 / static_cast<double>(k));
    // floor scales with the list so the ratios are exactly invariant under
    // positive rescaling; non-positive sims keep a vanishing positive weight
    const double floor = sim_floor * max_abs;
    std::vector<double> clamped(k);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        clamped[i] = std::max(sims[i], floor);
        sum += clamped[i];
    }
    for (double& c : clamped) c /= sum;
    return clamped;
}

std::pair<LoraModule, MergeSpec> adaptive_merge(const LoraBank& bank,
                                                const UserRecord& user,
                                                const PersonalizationConfig& cfg) {
    cfg.validate();
    if (bank.entries.empty()) throw ParameterError("adaptive_merge: empty bank");
    const HashingEncoder encoder(bank.config.encoder);
    const ProfileEmbedding emb = retrieval_embedding(user, encoder);
    const Retrieved r = retrieve_top_k(bank, emb, cfg.top_k);

    MergeSpec spec;
    spec.anchor_ids = r.anchor_ids;
    spec.similarities = r.similarities;
    spec.mode = cfg.merge_mode;
    if (cfg.alpha_fixed) {
        // override aligned with retrieval order: alpha to the nearest anchor
        spec.coefficients = {*cfg.alpha_fixed, 1.0 - *cfg.alpha_fixed};
    } else {
        spec.coefficients = merge_coefficients(r.similarities, cfg.sim_floor);
    }

    std::vector<const LoraModule*> by_id(spec.anchor_ids.size(), nullptr);
    for (std::size_t t = 0; t < spec.anchor_ids.size(); ++t) {
        for (const auto& e : bank.entries)
            if (e.anchor_id == spec.anchor_ids[t]) by_id[t] = &e.adapter;
        if (!by_id[t]) throw Error("adaptive_merge: retrieved id missing from bank");
    }
    if (spec.anchor_ids.size() == 2)
        return {merge_pair(*by_id[0], *by_id[1], spec), spec};
    std::vector<LoraModule> modules;
    modules.reserve(by_id.size());
    for (const LoraModule* m : by_id) modules.push_back(*m);
    return {merge(modules, spec), spec};
}

PersonalizedModel personalize_user(const LoraBank& bank,
                                   const BackboneModel& base,
                                   const UserRecord& user,
                                   const PersonalizationConfig& cfg,
                                   SeededRng& rng) {
    cfg.validate();
    if (bank.is_anchor(user.user_id))
        throw ContaminationError("personalize_user: '" + user.user_id +
                                 "' is a bank anchor");
    if (user.history.empty())
        throw DataError("personalize_user: '" + user.user_id +
                        "' has an empty history");

    auto [merged, spec] = adaptive_merge(bank, user, cfg);
    BackboneModel frozen = materialize(base, merged);
    const std::string guard = frozen.weights_checksum();

    const auto examples = examples_from_history(
        user, cfg.task, base.config().input_dim, base.config().num_classes);
    LoraModule init = init_lora(layer_dims(base.config()), cfg.stacked.rank,
                                "stacked:" + user.user_id, rng);
    TrainResult trained = train_adapter(frozen, {}, std::move(init), examples,
                                        cfg.stacked, rng, loss_for(cfg.task));

    if (frozen.weights_checksum() != guard)
        throw Error("personalize_user: frozen weights changed during adaptation");

    PersonalizedModel pm;
    pm.user_id = user.user_id;
    pm.task = cfg.task;
    pm.model = std::move(frozen);
    pm.stacked = std::move(trained.adapter);
    pm.provenance = std::move(spec);
    return pm;
}

double predict(const PersonalizedModel& pm, const std::vector<double>& features) {
    const std::vector<double> out = forward(pm.model, {pm.stacked}, features);
    if (pm.task == TaskKind::rating) {
        const double v = out[0];
        return std::min(5.0, std::max(1.0, v));
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < out.size(); ++i)
        if (out[i] > out[best]) best = i; // first index wins ties
    return static_cast<double>(best);
}

void save_personalized(const std::filesystem::path& dir,
                       const PersonalizedModel& pm) {
    std::filesystem::create_directories(dir);
    ojson spec;
    spec["version"] = 1;
    spec["user_id"] = pm.user_id;
    spec["task"] = to_string(pm.task);
    spec["mode"] = to_string(pm.provenance.mode);
    spec["anchors"] = ojson::array();
    for (std::size_t i = 0; i < pm.provenance.anchor_ids.size(); ++i)
        spec["anchors"].push_back({{"anchor_id", pm.provenance.anchor_ids[i]},
                                   {"similarity", pm.provenance.similarities[i]},
                                   {"coefficient", pm.provenance.coefficients[i]}});
    write_text_file(dir / "merge_spec.json", spec.dump(2) + "\n");
    pm.model.save(dir / "model");
    save_adapter(dir / "stacked", pm.stacked);
}

PersonalizedModel load_personalized(const std::filesystem::path& dir) {
    const ojson spec = read_json_file(dir / "merge_spec.json");
    check_version(spec, "merge spec");
    PersonalizedModel pm;
    try {
        pm.user_id = spec.at("user_id").get<std::string>();
        pm.task = task_from_string(spec.at("task").get<std::string>());
        pm.provenance.mode = merge_mode_from_string(spec.at("mode").get<std::string>());
        for (const auto& a : spec.at("anchors")) {
            pm.provenance.anchor_ids.push_back(a.at("anchor_id").get<std::string>());
            pm.provenance.similarities.push_back(a.at("similarity").get<double>());
            pm.provenance.coefficients.push_back(a.at("coefficient").get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("merge spec: " + std::string(e.what()));
    }
    pm.provenance.validate();
    pm.model = BackboneModel::load(dir / "model");
    if (!pm.model.frozen())
        throw IntegrityError("personalized artifact: model is not frozen");
    pm.stacked = load_adapter(dir / "stacked");
    return pm;
}

} // namespace mta
