#pragma once

// Configuration-driven experiment runner: JSON configs, per-seed training
// runs with loss CSVs, interval evaluation, final checkpoints, resolved-config
// echoes, and one-axis ablation sweeps aggregated into a CSV.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfm/checkpoint.hpp"
#include "mfm/datagen.hpp"
#include "mfm/metrics.hpp"
#include "mfm/uda.hpp"

namespace mfm {

struct ExperimentConfig {
    std::string model = "single";  // single | multi
    int classes = 4;
    int feat_channels = 64;
    RebuilderConfig rebuilder;
    PipelineConfig pipeline;
    SceneSpec scene;
    std::string dataset_folder;  // when set: source/ and target/ under this path
    std::string init_checkpoint; // optional warm start
    int steps = 2000;
    int batch = 4;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    int eval_interval = 500;
    int train_scenes = 200;
    int eval_scenes = 64;
    std::string out_dir = "runs/exp";

    ExperimentConfig() {
        // Desk-scale reconstruction stack (raw struct defaults are full-scale).
        rebuilder.embed_dim = 128;
        rebuilder.grid = 8;
        rebuilder.num_blocks = 2;
        rebuilder.num_heads = 4;
        rebuilder.mask_ratio = 0.40;
    }

    SegModelConfig model_config() const {
        SegModelConfig mc;
        mc.classes = classes;
        mc.multi_scale = model == "multi";
        mc.feat_channels = feat_channels;
        return mc;
    }

    void validate() const {
        if (model != "single" && model != "multi")
            throw ConfigError("config: model must be 'single' or 'multi', got '" + model + "'");
        if (steps < 0) throw ConfigError("config: steps must be >= 0");
        if (batch < 1) throw ConfigError("config: batch must be >= 1");
        if (seeds.empty()) throw ConfigError("config: seeds list must not be empty");
        if (eval_interval < 1) throw ConfigError("config: eval_interval must be >= 1");
        if (train_scenes < 1 || eval_scenes < 1)
            throw ConfigError("config: scene pool sizes must be >= 1");
        if (out_dir.empty()) throw ConfigError("config: out_dir must not be empty");
        if (dataset_folder.empty()) {
            scene.validate();
            if (classes != scene.classes)
                throw ConfigError("config: classes (" + std::to_string(classes) +
                                  ") must match scene.classes (" +
                                  std::to_string(scene.classes) + ") for synthetic data");
        }
        rebuilder.validate();
        PipelineConfig p = pipeline;
        p.total_steps = steps;
        p.validate();
        model_config();  // throws on invalid class count
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["model"] = model;
        j["classes"] = classes;
        j["feat_channels"] = feat_channels;
        j["steps"] = steps;
        j["batch"] = batch;
        j["seeds"] = seeds;
        j["eval_interval"] = eval_interval;
        j["train_scenes"] = train_scenes;
        j["eval_scenes"] = eval_scenes;
        j["out_dir"] = out_dir;
        j["dataset_folder"] = dataset_folder;
        j["init_checkpoint"] = init_checkpoint;
        j["objective"] = objective_name(pipeline.objective);
        j["lambda"] = pipeline.lambda;
        j["tau"] = pipeline.tau;
        j["alpha"] = pipeline.alpha;
        j["base_lr"] = pipeline.base_lr;
        j["rebuilder_lr"] = pipeline.rebuilder_lr;
        j["weight_decay"] = pipeline.weight_decay;
        j["poly_power"] = pipeline.poly_power;
        j["q_weighting"] = pipeline.q_weighting;
        j["rebuilder"] = {{"embed_dim", rebuilder.embed_dim},
                          {"grid", rebuilder.grid},
                          {"num_blocks", rebuilder.num_blocks},
                          {"num_heads", rebuilder.num_heads},
                          {"mask_ratio", rebuilder.mask_ratio},
                          {"learned_pos", rebuilder.learned_pos}};
        j["scene"] = {{"height", scene.height},
                      {"width", scene.width},
                      {"classes", scene.classes},
                      {"min_shapes", scene.min_shapes},
                      {"max_shapes", scene.max_shapes},
                      {"palette_rotation_deg", scene.palette_rotation_deg},
                      {"noise_sigma", scene.noise_sigma},
                      {"brightness_shift", scene.brightness_shift},
                      {"texture_freq", scene.texture_freq},
                      {"texture_amp", scene.texture_amp}};
        return j;
    }

    static ExperimentConfig from_json(const nlohmann::json& j) {
        auto check_keys = [](const nlohmann::json& obj, const std::set<std::string>& allowed,
                             const std::string& where) {
            for (auto it = obj.begin(); it != obj.end(); ++it)
                if (!allowed.count(it.key()))
                    throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
        };
        if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
        check_keys(j,
                   {"model", "classes", "feat_channels", "steps", "batch", "seeds",
                    "eval_interval", "train_scenes", "eval_scenes", "out_dir", "dataset_folder",
                    "init_checkpoint", "objective", "lambda", "tau", "alpha", "base_lr",
                    "rebuilder_lr", "weight_decay", "poly_power", "q_weighting", "rebuilder",
                    "scene"},
                   "the top level");

        ExperimentConfig c;
        try {
            c.model = j.value("model", c.model);
            c.classes = j.value("classes", c.classes);
            c.feat_channels = j.value("feat_channels", c.feat_channels);
            c.steps = j.value("steps", c.steps);
            c.batch = j.value("batch", c.batch);
            c.seeds = j.value("seeds", c.seeds);
            c.eval_interval = j.value("eval_interval", c.eval_interval);
            c.train_scenes = j.value("train_scenes", c.train_scenes);
            c.eval_scenes = j.value("eval_scenes", c.eval_scenes);
            c.out_dir = j.value("out_dir", c.out_dir);
            c.dataset_folder = j.value("dataset_folder", c.dataset_folder);
            c.init_checkpoint = j.value("init_checkpoint", c.init_checkpoint);
            c.pipeline.objective =
                objective_from_string(j.value("objective", objective_name(c.pipeline.objective)));
            c.pipeline.lambda = j.value("lambda", c.pipeline.lambda);
            c.pipeline.tau = j.value("tau", c.pipeline.tau);
            c.pipeline.alpha = j.value("alpha", c.pipeline.alpha);
            c.pipeline.base_lr = j.value("base_lr", c.pipeline.base_lr);
            c.pipeline.rebuilder_lr = j.value("rebuilder_lr", c.pipeline.rebuilder_lr);
            c.pipeline.weight_decay = j.value("weight_decay", c.pipeline.weight_decay);
            c.pipeline.poly_power = j.value("poly_power", c.pipeline.poly_power);
            c.pipeline.q_weighting = j.value("q_weighting", c.pipeline.q_weighting);
            if (j.contains("rebuilder")) {
                const auto& r = j["rebuilder"];
                check_keys(r,
                           {"embed_dim", "grid", "num_blocks", "num_heads", "mask_ratio",
                            "learned_pos"},
                           "'rebuilder'");
                c.rebuilder.embed_dim = r.value("embed_dim", c.rebuilder.embed_dim);
                c.rebuilder.grid = r.value("grid", c.rebuilder.grid);
                c.rebuilder.num_blocks = r.value("num_blocks", c.rebuilder.num_blocks);
                c.rebuilder.num_heads = r.value("num_heads", c.rebuilder.num_heads);
                c.rebuilder.mask_ratio = r.value("mask_ratio", c.rebuilder.mask_ratio);
                c.rebuilder.learned_pos = r.value("learned_pos", c.rebuilder.learned_pos);
            }
            if (j.contains("scene")) {
                const auto& s = j["scene"];
                check_keys(s,
                           {"height", "width", "classes", "min_shapes", "max_shapes",
                            "palette_rotation_deg", "noise_sigma", "brightness_shift",
                            "texture_freq", "texture_amp"},
                           "'scene'");
                c.scene.height = s.value("height", c.scene.height);
                c.scene.width = s.value("width", c.scene.width);
                c.scene.classes = s.value("classes", c.scene.classes);
                c.scene.min_shapes = s.value("min_shapes", c.scene.min_shapes);
                c.scene.max_shapes = s.value("max_shapes", c.scene.max_shapes);
                c.scene.palette_rotation_deg =
                    s.value("palette_rotation_deg", c.scene.palette_rotation_deg);
                c.scene.noise_sigma = s.value("noise_sigma", c.scene.noise_sigma);
                c.scene.brightness_shift = s.value("brightness_shift", c.scene.brightness_shift);
                c.scene.texture_freq = s.value("texture_freq", c.scene.texture_freq);
                c.scene.texture_amp = s.value("texture_amp", c.scene.texture_amp);
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config: malformed value (") + e.what() + ")");
        }
        c.validate();
        return c;
    }

    static ExperimentConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("config: cannot open '" + path + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config: '" + path + "' is not valid JSON (" + e.what() + ")");
        }
        return from_json(j);
    }
};

// ----------------------------------------------------------------------------
// Data pools

struct ScenePool {
    std::vector<ScenePair> scenes;
    int height = 0, width = 0;

    Batch batch(const std::vector<std::size_t>& indices) const {
        const int n = static_cast<int>(indices.size());
        const std::int64_t per = static_cast<std::int64_t>(3) * height * width;
        std::vector<float> img(static_cast<std::size_t>(n) * per);
        Batch b;
        b.labels.reserve(static_cast<std::size_t>(n) * height * width);
        for (int i = 0; i < n; ++i) {
            const ScenePair& s = scenes[indices[i]];
            std::copy(s.image.data().begin(), s.image.data().end(), img.begin() + i * per);
            b.labels.insert(b.labels.end(), s.labels.idx.begin(), s.labels.idx.end());
        }
        b.images = Tensor::leaf({n, 3, height, width}, std::move(img));
        return b;
    }
};

namespace harness_detail {

inline ScenePool synthetic_pool(const SceneSpec& spec, Domain domain, std::uint64_t seed,
                                std::string_view tag, int count) {
    ScenePool pool;
    pool.height = spec.height;
    pool.width = spec.width;
    for (int i = 0; i < count; ++i)
        pool.scenes.push_back(generate_pair(derive_seed(seed, tag, i), spec, domain));
    return pool;
}

inline ScenePool folder_pool(const std::string& dir, int classes) {
    Dataset ds = load_folder(dir, classes);
    if (ds.items.empty())
        throw ConfigError("dataset: '" + dir + "' contains no valid image/label pairs" +
                          (ds.problems.empty() ? "" : " (first problem: " + ds.problems[0] + ")"));
    ScenePool pool;
    for (const auto& it : ds.items) pool.scenes.push_back(load_item(it));
    pool.height = pool.scenes[0].labels.h;
    pool.width = pool.scenes[0].labels.w;
    for (const auto& s : pool.scenes)
        if (s.labels.h != pool.height || s.labels.w != pool.width)
            throw ConfigError("dataset: '" + dir + "' mixes image extents");
    return pool;
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace harness_detail

// ----------------------------------------------------------------------------
// Evaluation

struct EvalResult {
    IouReport target;  // the headline number
    IouReport source;  // domain-gap diagnostic
};

inline IouReport evaluate_pool(const SegModel& model, const ScenePool& pool, int classes) {
    ConfusionMatrix conf = ConfusionMatrix::make(classes);
    for (const auto& s : pool.scenes) {
        LabelMap pred = predict_labels(model, s.image);
        accumulate(conf, pred, s.labels);
    }
    return miou(conf);
}

// ----------------------------------------------------------------------------
// Single experiment

struct RunResult {
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    double final_miou = 0.0;  // target domain
    std::string run_dir;
};

struct ExperimentResult {
    std::vector<RunResult> runs;
    bool any_failed() const {
        for (const auto& r : runs)
            if (r.failed) return true;
        return false;
    }
    double mean_miou() const {
        double s = 0;
        int n = 0;
        for (const auto& r : runs)
            if (!r.failed) {
                s += r.final_miou;
                ++n;
            }
        return n ? s / n : std::nan("");
    }
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate();
    ExperimentResult result;

    for (std::uint64_t seed : cfg.seeds) {
        RunResult rr;
        rr.seed = seed;
        const fs::path run_dir = fs::path(cfg.out_dir) / ("seed" + std::to_string(seed));
        rr.run_dir = run_dir.string();
        fs::create_directories(run_dir);

        // Resolved-config echo: exactly this run, reproducible from the file.
        {
            ExperimentConfig echo = cfg;
            echo.seeds = {seed};
            echo.out_dir = run_dir.string();
            std::ofstream out(run_dir / "config.json");
            out << echo.to_json().dump(2) << "\n";
        }

        try {
            // Data pools. Synthetic pools are derived from the seed; folder
            // pools are fixed data with seed-driven batching.
            ScenePool train_src, train_tgt, eval_tgt, eval_src;
            if (cfg.dataset_folder.empty()) {
                train_src = harness_detail::synthetic_pool(cfg.scene, Domain::source, seed,
                                                           "data-src", cfg.train_scenes);
                train_tgt = harness_detail::synthetic_pool(cfg.scene, Domain::target, seed,
                                                           "data-tgt", cfg.train_scenes);
                eval_tgt = harness_detail::synthetic_pool(cfg.scene, Domain::target, seed,
                                                          "data-eval-tgt", cfg.eval_scenes);
                eval_src = harness_detail::synthetic_pool(cfg.scene, Domain::source, seed,
                                                          "data-eval-src", cfg.eval_scenes);
            } else {
                const std::string base = cfg.dataset_folder;
                train_src = harness_detail::folder_pool(base + "/source", cfg.classes);
                train_tgt = harness_detail::folder_pool(base + "/target", cfg.classes);
                eval_tgt = train_tgt;  // folder mode: target labels are eval-only
                eval_src = train_src;
            }

            PipelineConfig pipe = cfg.pipeline;
            pipe.total_steps = cfg.steps;
            TrainerState ts =
                TrainerState::make(cfg.model_config(), cfg.rebuilder, pipe, seed);
            if (!cfg.init_checkpoint.empty()) {
                nn::ParamMap all = ts.model_params;
                all.extend("", ts.reb_params);
                ckpt::assign(all, ckpt::load(cfg.init_checkpoint));
            }

            std::ofstream csv(run_dir / "loss.csv");
            csv << "step,l_sup,l_uda,l_mfm,l_overall,q\n";

            Rng brng(derive_seed(seed, "batches"));
            nlohmann::json history = nlohmann::json::array();
            auto eval_now = [&](int step) {
                IouReport tgt = evaluate_pool(ts.student, eval_tgt, cfg.classes);
                history.push_back({{"step", step}, {"miou_target", tgt.miou}});
                return tgt;
            };

            for (int step = 0; step < cfg.steps; ++step) {
                auto draw = [&](const ScenePool& pool) {
                    std::vector<std::size_t> idx(cfg.batch);
                    for (auto& v : idx)
                        v = static_cast<std::size_t>(
                            brng.below(static_cast<std::uint64_t>(pool.scenes.size())));
                    return pool.batch(idx);
                };
                Batch src = draw(train_src);
                Batch tgt = draw(train_tgt);
                tgt.labels.clear();  // target labels are never visible to training
                LossReport rep = train_step(ts, src, tgt);
                csv << step << ',' << harness_detail::fmt(rep.l_sup) << ','
                    << harness_detail::fmt(rep.l_uda) << ',' << harness_detail::fmt(rep.l_mfm)
                    << ',' << harness_detail::fmt(rep.l_overall) << ','
                    << harness_detail::fmt(rep.q) << "\n";
                if ((step + 1) % cfg.eval_interval == 0 && step + 1 < cfg.steps)
                    eval_now(step + 1);
            }

            IouReport tgt = eval_now(cfg.steps);
            IouReport src = evaluate_pool(ts.student, eval_src, cfg.classes);
            rr.final_miou = tgt.miou;

            nlohmann::json ev;
            ev["failed"] = false;
            ev["steps"] = cfg.steps;
            ev["miou_target"] = tgt.miou;
            ev["miou_source"] = src.miou;
            ev["per_class_iou"] = tgt.per_class;
            ev["per_class_valid"] = tgt.valid;
            ev["scored_pixels"] = tgt.scored;
            ev["history"] = history;
            std::ofstream(run_dir / "eval.json") << ev.dump(2) << "\n";

            nn::ParamMap all = ts.model_params;
            all.extend("", ts.reb_params);
            ckpt::save((run_dir / "checkpoint").string(), all);
        } catch (const NumericError& e) {
            rr.failed = true;
            rr.error = e.what();
            nlohmann::json ev;
            ev["failed"] = true;
            ev["error"] = rr.error;
            std::ofstream(run_dir / "eval.json") << ev.dump(2) << "\n";
        }
        result.runs.push_back(std::move(rr));
    }
    return result;
}

// ----------------------------------------------------------------------------
// Sweeps

inline void apply_axis(ExperimentConfig& cfg, const std::string& axis, const std::string& value) {
    auto as_double = [&]() {
        try {
            std::size_t pos = 0;
            double v = std::stod(value, &pos);
            if (pos != value.size()) throw std::invalid_argument(value);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("sweep: value '" + value + "' is not a number for axis '" + axis +
                              "'");
        }
    };
    auto as_int = [&]() {
        const double v = as_double();
        if (v != std::floor(v))
            throw ConfigError("sweep: axis '" + axis + "' needs an integer, got '" + value + "'");
        return static_cast<int>(v);
    };
    if (axis == "mask_ratio")
        cfg.rebuilder.mask_ratio = as_double();
    else if (axis == "lambda")
        cfg.pipeline.lambda = as_double();
    else if (axis == "num_blocks")
        cfg.rebuilder.num_blocks = as_int();
    else if (axis == "embed_dim")
        cfg.rebuilder.embed_dim = as_int();
    else if (axis == "grid")
        cfg.rebuilder.grid = as_int();
    else if (axis == "objective")
        cfg.pipeline.objective = objective_from_string(value);
    else
        throw ConfigError("sweep: unknown axis '" + axis + "'");
}

struct SweepRow {
    std::string value;
    std::uint64_t seed = 0;
    bool failed = false;
    double final_miou = 0.0;
    double mean_miou = 0.0;  // over this value's successful seeds
};

inline std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::string& axis,
                                       const std::vector<std::string>& values) {
    namespace fs = std::filesystem;
    if (values.empty()) throw ConfigError("sweep: values list must not be empty");
    std::vector<SweepRow> rows;
    for (const auto& value : values) {
        ExperimentConfig cfg = base;
        apply_axis(cfg, axis, value);
        std::string tag = value;
        for (auto& ch : tag)
            if (ch == '.' || ch == '-' || ch == '+') ch = '_';
        cfg.out_dir = (fs::path(base.out_dir) / (axis + "_" + tag)).string();
        cfg.validate();
        ExperimentResult res = run_experiment(cfg);
        const double mean = res.mean_miou();
        for (const auto& rr : res.runs)
            rows.push_back({value, rr.seed, rr.failed, rr.final_miou, mean});
    }

    fs::create_directories(base.out_dir);
    std::ofstream csv(fs::path(base.out_dir) / "sweep.csv");
    csv << "axis,value,seed,final_miou,mean_miou,status\n";
    for (const auto& r : rows)
        csv << axis << ',' << r.value << ',' << r.seed << ','
            << (r.failed ? std::string("nan") : harness_detail::fmt(r.final_miou)) << ','
            << harness_detail::fmt(r.mean_miou) << ',' << (r.failed ? "failed" : "ok") << "\n";
    return rows;
}

}  // namespace mfm
