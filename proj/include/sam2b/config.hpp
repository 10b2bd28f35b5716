#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sam2b/dataset.hpp"
#include "sam2b/kv.hpp"
#include "sam2b/trainer.hpp"

namespace sam2b {

/// Whole-experiment configuration: scenario generation, training, and the
/// ablation variant list, all from one plain-text key-value file. Unknown
/// keys are rejected, and every run re-emits the resolved configuration next
/// to its outputs.
struct ExperimentConfig {
    GenerationConfig generation;
    TrainConfig train;
    std::vector<Variant> ablate_variants{Variant::kSam2b, Variant::kFixedWeight};

    static ExperimentConfig from_kv(kv::Reader& r) {
        ExperimentConfig c;
        c.generation = generation_config_from_kv(r);
        c.train.epochs = r.get_size("train.epochs", c.train.epochs);
        c.train.batch_size = r.get_size("train.batch_size", c.train.batch_size);
        c.train.lr = r.get_double("train.lr", c.train.lr);
        c.train.adam_beta1 = r.get_double("train.adam_beta1", c.train.adam_beta1);
        c.train.adam_beta2 = r.get_double("train.adam_beta2", c.train.adam_beta2);
        c.train.adam_eps = r.get_double("train.adam_eps", c.train.adam_eps);
        c.train.seed = r.get_u64("train.seed", c.train.seed);
        c.train.split_fraction = r.get_double("train.split_fraction", c.generation.split_fraction);
        c.train.loss.beta = r.get_double("loss.beta", c.train.loss.beta);
        c.train.loss.theta = r.get_double("loss.theta", c.train.loss.theta);
        c.train.model = model_config_from_kv(r);
        const std::string variants = r.get_str("ablate.variants", "");
        if (!variants.empty()) {
            c.ablate_variants.clear();
            for (const std::string& name : kv::split(variants, ','))
                if (!name.empty()) c.ablate_variants.push_back(variant_from_name(name));
            if (c.ablate_variants.empty())
                throw ConfigError("ablate.variants lists no variants");
        }
        r.reject_unknown();
        return c;
    }

    static ExperimentConfig from_file(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot open config '" + path.string() + "'");
        std::stringstream ss;
        ss << f.rdbuf();
        kv::Reader reader(kv::parse(ss.str()));
        return from_kv(reader);
    }

    KvMap to_kv() const {
        KvMap m = generation_config_to_kv(generation);
        m["train.epochs"] = kv::fmt(static_cast<std::uint64_t>(train.epochs));
        m["train.batch_size"] = kv::fmt(static_cast<std::uint64_t>(train.batch_size));
        m["train.lr"] = kv::fmt(train.lr);
        m["train.adam_beta1"] = kv::fmt(train.adam_beta1);
        m["train.adam_beta2"] = kv::fmt(train.adam_beta2);
        m["train.adam_eps"] = kv::fmt(train.adam_eps);
        m["train.seed"] = kv::fmt(train.seed);
        m["train.split_fraction"] = kv::fmt(train.split_fraction);
        m["loss.beta"] = kv::fmt(train.loss.beta);
        m["loss.theta"] = kv::fmt(train.loss.theta);
        for (const auto& [k, v] : model_config_to_kv(train.model)) m[k] = v;
        std::string variants;
        for (Variant v : ablate_variants) {
            if (!variants.empty()) variants += ",";
            variants += variant_name(v);
        }
        m["ablate.variants"] = variants;
        return m;
    }

    /// Provenance snapshot written next to every run's outputs.
    void write_resolved(const std::filesystem::path& path) const {
        std::ofstream f(path);
        if (!f) throw IoError("cannot write resolved config '" + path.string() + "'");
        f << kv::dump(to_kv());
    }
};

}  // namespace sam2b
