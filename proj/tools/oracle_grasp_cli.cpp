// Command-line front end: predict, batch-eval, record, replay and synth.
//
// Exit codes: 0 success, 1 pipeline or runtime failure, 2 usage or config error.

#include <CLI11.hpp>

#include <atomic>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>

#include "oracle_grasp/io.hpp"
#include "oracle_grasp/pipeline.hpp"
#include "oracle_grasp/synth.hpp"
#include "oracle_grasp/visualize.hpp"

namespace og = oracle_grasp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

int exit_code_for(const og::Error& e) {
    switch (e.kind()) {
        case og::ErrorKind::kConfig: return kExitUsage;
        default: return kExitFailure;
    }
}

// One flag per PipelineConfig field; the bracketed key names the field.
struct ConfigFlags {
    std::optional<int> iterations, stop_window, crop_iterations, max_parse_retries, thickness, depth_samples;
    std::optional<double> iou_threshold, stop_factor, alpha_min, anisotropy_min, crop_margin, font_scale;
    std::optional<double> focal_length, clearance_radius;
    std::optional<std::string> grid_schedule, overlay_mode, overlay_color;
    std::optional<bool> continuous, labels;
    std::vector<std::string> ablate;
    std::string config_path;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "Pipeline configuration file (JSON)")->check(CLI::ExistingFile);
        app->add_option("--iterations,-K", iterations, "GRP iteration budget K [config: iterations]");
        app->add_option("--stop-window,-m", stop_window, "early-stop window m [config: stop_window]");
        app->add_option("--crop-iterations", crop_iterations,
                        "iterations in the crop stage, 0 = m [config: crop_iterations]");
        app->add_option("--iou-threshold", iou_threshold, "IoU threshold gamma [config: iou_threshold]");
        app->add_option("--stop-factor", stop_factor, "stopping factor rho [config: stop_factor]");
        app->add_option("--alpha-min", alpha_min,
                        "orientation refinement trigger in degrees [config: alpha_min_deg]");
        app->add_option("--anisotropy-min", anisotropy_min,
                        "minimum eigenvalue ratio for orientation refinement [config: anisotropy_min]");
        app->add_option("--grid-schedule", grid_schedule,
                        "comma-separated UxV grids, e.g. 3x3,4x4 [config: grid_schedule]");
        app->add_option("--crop-margin", crop_margin,
                        "crop margin as a fraction of the box diagonal [config: crop_margin_frac]");
        app->add_option("--max-parse-retries", max_parse_retries,
                        "retries per unparseable reply [config: max_parse_retries]");
        app->add_option("--continuous-early-stop", continuous,
                        "re-test the stopping rule after every iteration [config: continuous_early_stop]");
        app->add_option("--ablate", ablate,
                        "disable a component: scp [config: ablation.use_scp], or "
                        "[config: ablation.use_orientation_refinement], be [config: ablation.use_explanation], "
                        "gr [config: ablation.use_depth_refinement]")
            ->check(CLI::IsMember({"scp", "or", "be", "gr"}));
        app->add_option("--overlay", overlay_mode, "grid overlay sent to the oracle [config: overlay.mode]")
            ->check(CLI::IsMember({"grid", "none"}));
        app->add_option("--overlay-color", overlay_color, "grid line color R,G,B [config: overlay.color]");
        app->add_option("--overlay-thickness", thickness, "grid line thickness in px [config: overlay.thickness]");
        app->add_option("--overlay-labels", labels, "draw cell labels [config: overlay.labels]");
        app->add_option("--font-scale", font_scale, "cell label font scale [config: overlay.font_scale]");
        app->add_option("--depth-samples,-w", depth_samples, "depth samples w [config: depth.samples]");
        app->add_option("--focal-length", focal_length, "camera focal length in px [config: depth.focal_length_px]");
        app->add_option("--clearance-radius", clearance_radius,
                        "gripper clearance radius in m [config: depth.clearance_radius_m]");
    }

    og::PipelineConfig build() const {
        og::PipelineConfig c;
        if (!config_path.empty()) c = og::config_from_json(og::read_json_file(config_path));
        if (iterations) c.iterations = *iterations;
        if (stop_window) c.stop_window = *stop_window;
        if (crop_iterations) c.crop_iterations = *crop_iterations;
        if (iou_threshold) c.iou_threshold = *iou_threshold;
        if (stop_factor) c.stop_factor = *stop_factor;
        if (alpha_min) c.alpha_min_deg = *alpha_min;
        if (anisotropy_min) c.anisotropy_min = *anisotropy_min;
        if (grid_schedule) c.grid_schedule = parse_schedule(*grid_schedule);
        if (crop_margin) c.crop_margin_frac = *crop_margin;
        if (max_parse_retries) c.max_parse_retries = *max_parse_retries;
        if (continuous) c.continuous_early_stop = *continuous;
        for (const std::string& a : ablate) {
            if (a == "scp") c.use_scp = false;
            if (a == "or") c.use_orientation_refinement = false;
            if (a == "be") c.use_explanation = false;
            if (a == "gr") c.use_depth_refinement = false;
        }
        if (overlay_mode) c.overlay = *overlay_mode == "grid" ? og::OverlayMode::kGrid : og::OverlayMode::kNone;
        if (overlay_color) c.overlay_style.color = parse_color(*overlay_color);
        if (thickness) c.overlay_style.thickness = *thickness;
        if (labels) c.overlay_style.labels = *labels;
        if (font_scale) c.overlay_style.font_scale = *font_scale;
        if (depth_samples) c.depth_samples = *depth_samples;
        if (focal_length) c.focal_length_px = *focal_length;
        if (clearance_radius) c.clearance_radius_m = *clearance_radius;
        c.validate();
        return c;
    }

    static std::vector<std::pair<int, int>> parse_schedule(const std::string& text) {
        std::vector<std::pair<int, int>> out;
        std::stringstream in(text);
        std::string item;
        while (std::getline(in, item, ',')) {
            int u = 0, v = 0;
            char x = 0;
            std::istringstream cell(item);
            if (!(cell >> u >> x >> v) || (x != 'x' && x != 'X')) {
                throw og::Error(og::ErrorKind::kConfig, "bad grid '" + item + "', expected UxV");
            }
            out.emplace_back(u, v);
        }
        return out;
    }

    static cv::Vec3b parse_color(const std::string& text) {
        int r = 0, g = 0, b = 0;
        char c1 = 0, c2 = 0;
        std::istringstream in(text);
        if (!(in >> r >> c1 >> g >> c2 >> b) || c1 != ',' || c2 != ',') {
            throw og::Error(og::ErrorKind::kConfig, "bad color '" + text + "', expected R,G,B");
        }
        return {static_cast<uchar>(r), static_cast<uchar>(g), static_cast<uchar>(b)};
    }
};

struct OracleFlags {
    std::string kind = "scripted";
    std::vector<std::string> targets;
    std::string mode = "fixed";
    double noise_radius = 0.0;
    std::uint64_t seed = 0;
    std::string scene_text = "a graspable object";
    std::string transcript;  // replay source
    double temperature = 0.6;
    double timeout_s = 60.0;

    void attach(CLI::App* app, bool allow_replay) {
        std::vector<std::string> kinds{"scripted", "http"};
        if (allow_replay) kinds.push_back("replay");
        app->add_option("--oracle", kind, "oracle backend")->check(CLI::IsMember(kinds));
        app->add_option("--target", targets, "scripted target point x,y (repeatable, cycled per query)");
        app->add_option("--scripted-mode", mode, "scripted behavior")
            ->check(CLI::IsMember({"fixed", "noisy", "random"}));
        app->add_option("--noise-radius", noise_radius, "scripted target noise radius in px");
        app->add_option("--seed", seed, "seed for scripted noise and random cells");
        app->add_option("--scene-text", scene_text, "scripted SCP reply");
        if (allow_replay) {
            app->add_option("--replay-transcript", transcript, "transcript to replay (with --oracle replay)");
        }
        app->add_option("--temperature", temperature, "HTTP sampling temperature");
        app->add_option("--timeout", timeout_s, "HTTP timeout in seconds");
    }

    std::unique_ptr<og::Oracle> make(const std::vector<og::Point>& default_targets = {}) const {
        if (kind == "http") {
            og::HttpOracleConfig http;
            http.temperature = temperature;
            http.timeout_s = timeout_s;
            return std::make_unique<og::HttpOracle>(og::http_config_from_env(http));
        }
        if (kind == "replay") {
            if (transcript.empty()) throw UsageError("--oracle replay needs --replay-transcript");
            return std::make_unique<og::ReplayOracle>(og::read_transcript(transcript).transcript);
        }
        og::ScriptedOracleConfig sc;
        sc.scene_text = scene_text;
        sc.seed = seed;
        sc.noise_radius_px = noise_radius;
        sc.mode = mode == "random" ? og::ScriptedMode::kRandomCell
                  : mode == "noisy" ? og::ScriptedMode::kNoisyTarget
                                    : og::ScriptedMode::kFixedTarget;
        for (const std::string& t : targets) {
            double x = 0, y = 0;
            char comma = 0;
            std::istringstream in(t);
            if (!(in >> x >> comma >> y) || comma != ',') throw UsageError("bad --target '" + t + "', expected x,y");
            sc.targets.push_back({x, y});
        }
        if (sc.targets.empty()) sc.targets = default_targets;
        if (sc.mode != og::ScriptedMode::kRandomCell && sc.targets.empty()) {
            throw UsageError("scripted oracle needs --target (or an annotation to take it from)");
        }
        return std::make_unique<og::ScriptedOracle>(sc);
    }
};

std::vector<og::Point> targets_from(const std::optional<og::AnnotationSet>& ann) {
    if (!ann) return {};
    return {ann->grasps.front().position};
}

void write_result(const std::string& path, const og::GraspResult& result, const og::PipelineConfig& config) {
    const std::string text = og::result_to_json(result, config).dump(2) + "\n";
    if (path.empty() || path == "-") {
        std::cout << text;
    } else {
        og::write_text_file(path, text);
    }
}

struct PredictInputs {
    std::string image, depth, annotation;
    og::RgbImage rgb;
    std::optional<og::DepthMap> depth_map;
    std::optional<og::AnnotationSet> ann;

    void load() {
        rgb = og::load_rgb(image);
        if (!depth.empty()) depth_map = og::load_depth(depth);
        if (!annotation.empty()) ann = og::load_annotation(annotation);
    }
};

nlohmann::json transcript_header(const og::PipelineConfig& config, const og::RgbImage& image) {
    return {{"format", 1}, {"config_digest", og::config_digest(config)},
            {"image_digest", og::image_digest(og::encode_png(image))}};
}

int cmd_predict(PredictInputs& in, OracleFlags& oflags, const ConfigFlags& cflags, const std::string& out,
                const std::string& overlay_out) {
    const og::PipelineConfig config = cflags.build();
    in.load();
    auto oracle = oflags.make(targets_from(in.ann));
    const og::GraspResult result = og::predict_grasp(in.rgb, in.depth_map ? &*in.depth_map : nullptr, *oracle, config);
    write_result(out, result, config);
    if (!overlay_out.empty()) og::save_rgb(overlay_out, og::render_grasp_overlay(in.rgb, result));
    return kExitOk;
}

int cmd_record(PredictInputs& in, OracleFlags& oflags, const ConfigFlags& cflags, const std::string& transcript_path,
               const std::string& out) {
    const og::PipelineConfig config = cflags.build();
    in.load();
    auto oracle = oflags.make(targets_from(in.ann));
    og::TranscriptFile file;
    file.header = transcript_header(config, in.rgb);
    try {
        const og::GraspResult result =
            og::predict_grasp(in.rgb, in.depth_map ? &*in.depth_map : nullptr, *oracle, config);
        file.transcript = result.transcript;
        og::write_transcript(transcript_path, file);
        og::write_image_store(transcript_path + ".images", file.transcript);
        write_result(out, result, config);
    } catch (const og::PredictionError& e) {
        file.transcript = e.partial_transcript();
        og::write_transcript(transcript_path, file);
        throw;
    }
    return kExitOk;
}

int cmd_replay(PredictInputs& in, const ConfigFlags& cflags, const std::string& transcript_path,
               const std::string& expect, const std::string& out) {
    const og::PipelineConfig config = cflags.build();
    in.load();
    const og::TranscriptFile file = og::read_transcript(transcript_path);
    if (file.header.value("config_digest", "") != og::config_digest(config)) {
        std::cerr << "error: config digest mismatch\n";
        return kExitFailure;
    }
    if (file.header.value("image_digest", "") != og::image_digest(og::encode_png(in.rgb))) {
        std::cerr << "error: image digest mismatch\n";
        return kExitFailure;
    }
    og::ReplayOracle oracle(file.transcript);
    const og::GraspResult result = og::predict_grasp(in.rgb, in.depth_map ? &*in.depth_map : nullptr, oracle, config);
    if (oracle.remaining() != 0) {
        std::cerr << "error: transcript divergence: " << oracle.remaining() << " recorded entries unused\n";
        return kExitFailure;
    }
    const std::string text = og::result_to_json(result, config).dump(2) + "\n";
    if (!out.empty()) og::write_text_file(out, text);
    if (!expect.empty() && og::read_text_file(expect) != text) {
        std::cerr << "error: replayed result differs from " << expect << "\n";
        return kExitFailure;
    }
    if (out.empty() && expect.empty()) std::cout << text;
    return kExitOk;
}

struct BatchFlags {
    std::string manifest, out, table_out, results_dir, transcript_dir;
    int jobs = 1;
};

int cmd_batch_eval(const BatchFlags& flags, OracleFlags& oflags, const ConfigFlags& cflags) {
    const og::PipelineConfig config = cflags.build();
    const og::DatasetManifest manifest = og::load_manifest(flags.manifest);
    for (const og::ManifestEntry& e : manifest.entries) {
        if (!e.annotation) throw UsageError("manifest entry '" + e.id + "' has no annotation to evaluate against");
    }
    if (!flags.results_dir.empty()) og::fs::create_directories(flags.results_dir);

    // Shared backend for HTTP; scripted and replay oracles are per image.
    std::unique_ptr<og::Oracle> shared;
    if (oflags.kind == "http") shared = oflags.make();

    const size_t n = manifest.entries.size();
    std::vector<std::optional<og::Prediction>> predictions(n);
    std::vector<std::optional<og::AnnotationSet>> annotations(n);
    std::vector<std::string> errors(n);
    std::atomic<size_t> next{0};

    auto worker = [&] {
        for (size_t i = next++; i < n; i = next++) {
            const og::ManifestEntry& e = manifest.entries[i];
            try {
                og::AnnotationSet ann = og::load_annotation(manifest.resolve(*e.annotation));
                ann.image_id = e.id;
                const og::RgbImage rgb = og::load_rgb(manifest.resolve(e.image));
                std::optional<og::DepthMap> depth;
                if (e.depth) depth = og::load_depth(manifest.resolve(*e.depth));
                std::unique_ptr<og::Oracle> own;
                if (!shared) {
                    OracleFlags per = oflags;
                    if (per.kind == "replay") {
                        per.transcript = (og::fs::path(flags.transcript_dir) / (e.id + ".jsonl")).string();
                    }
                    own = per.make(targets_from(ann));
                }
                og::Oracle& oracle = shared ? *shared : *own;
                const og::GraspResult result = og::predict_grasp(rgb, depth ? &*depth : nullptr, oracle, config);
                if (!flags.results_dir.empty()) {
                    write_result((og::fs::path(flags.results_dir) / (e.id + ".json")).string(), result, config);
                }
                predictions[i] = og::Prediction{e.id, result.pose.p, result.pose.theta_deg,
                                                result.depth.has_value() && result.depth->refined};
                annotations[i] = std::move(ann);
            } catch (const std::exception& ex) {
                errors[i] = ex.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int j = 0; j < std::max(1, flags.jobs); ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    std::vector<og::Prediction> ok;
    std::vector<og::AnnotationSet> anns;
    std::vector<og::EvalFailure> failures;
    for (size_t i = 0; i < n; ++i) {
        if (predictions[i]) {
            ok.push_back(*predictions[i]);
            anns.push_back(*annotations[i]);
        } else {
            failures.push_back({manifest.entries[i].id, errors[i]});
        }
    }
    og::EvalReport report;
    if (!ok.empty()) report = og::evaluate_batch(ok, anns);
    report.failures = failures;
    report.settings = og::config_to_json(config)["ablation"];
    report.settings["depth_refinement"] = config.use_depth_refinement ? "enabled" : "disabled";
    report.settings["config_digest"] = og::config_digest(config);

    const std::string json_text = og::report_to_json(report).dump(2) + "\n";
    if (flags.out.empty()) {
        std::cout << json_text;
    } else {
        og::write_text_file(flags.out, json_text);
    }
    const std::string table = og::report_to_table(report);
    if (!flags.table_out.empty()) og::write_text_file(flags.table_out, table);
    std::cerr << table;
    return failures.empty() ? kExitOk : kExitFailure;
}

struct SynthFlags {
    og::SynthOptions options;
    std::string out_dir = ".";
    std::string id;
};

int cmd_synth(const SynthFlags& flags) {
    const og::SynthScene scene = og::make_synth_scene(flags.options);
    const std::string id = flags.id.empty() ? flags.options.scene : flags.id;
    const og::fs::path dir(flags.out_dir);
    og::fs::create_directories(dir);
    og::save_rgb(dir / (id + ".png"), scene.image);
    og::save_depth(dir / (id + "_depth.png"), scene.depth);
    og::AnnotationSet ann = scene.annotation;
    ann.image_id = id;
    og::save_annotation(dir / (id + ".json"), ann);
    og::DatasetManifest manifest;
    manifest.entries.push_back({id, id + ".png", id + "_depth.png", id + ".json"});
    og::save_manifest(dir / (id + "_manifest.json"), manifest);
    std::cout << (dir / (id + ".png")).string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Zero-shot grasp pose prediction by grid-based multimodal-model querying"};
    app.require_subcommand(1);

    PredictInputs predict_in;
    OracleFlags predict_oracle;
    ConfigFlags predict_config;
    std::string predict_out, overlay_out;
    auto* predict = app.add_subcommand("predict", "predict a grasp pose for one image");
    predict->add_option("image", predict_in.image, "RGB image (PNG)")->required()->check(CLI::ExistingFile);
    predict->add_option("--depth", predict_in.depth, "registered 16-bit depth PNG (mm)")->check(CLI::ExistingFile);
    predict->add_option("--annotation", predict_in.annotation, "annotation file; supplies the scripted target")
        ->check(CLI::ExistingFile);
    predict->add_option("--out", predict_out, "result JSON path (default stdout)");
    predict->add_option("--overlay-out", overlay_out, "annotated PNG with the predicted grasp");
    predict_oracle.attach(predict, true);
    predict_config.attach(predict);

    BatchFlags batch_flags;
    OracleFlags batch_oracle;
    ConfigFlags batch_config;
    auto* batch = app.add_subcommand("batch-eval", "predict and evaluate every manifest entry");
    batch->add_option("manifest", batch_flags.manifest, "dataset manifest (JSON)")->required()->check(CLI::ExistingFile);
    batch->add_option("--out", batch_flags.out, "report JSON path (default stdout)");
    batch->add_option("--table-out", batch_flags.table_out, "text table path");
    batch->add_option("--results-dir", batch_flags.results_dir, "directory for per-image result JSON");
    batch->add_option("--transcript-dir", batch_flags.transcript_dir, "per-image <id>.jsonl for --oracle replay");
    batch->add_option("--jobs,-j", batch_flags.jobs, "images processed concurrently")->check(CLI::PositiveNumber);
    batch_oracle.attach(batch, true);
    batch_config.attach(batch);

    PredictInputs record_in;
    OracleFlags record_oracle;
    ConfigFlags record_config;
    std::string record_transcript, record_out;
    auto* record = app.add_subcommand("record", "predict and persist the oracle transcript");
    record->add_option("image", record_in.image, "RGB image (PNG)")->required()->check(CLI::ExistingFile);
    record->add_option("--depth", record_in.depth, "registered 16-bit depth PNG (mm)")->check(CLI::ExistingFile);
    record->add_option("--annotation", record_in.annotation, "annotation file; supplies the scripted target")
        ->check(CLI::ExistingFile);
    record->add_option("--transcript", record_transcript, "transcript output (JSON lines)")->required();
    record->add_option("--out", record_out, "result JSON path (default stdout)");
    record_oracle.attach(record, false);
    record_config.attach(record);

    PredictInputs replay_in;
    ConfigFlags replay_config;
    std::string replay_transcript, replay_expect, replay_out;
    auto* replay = app.add_subcommand("replay", "re-run a prediction from a recorded transcript");
    replay->add_option("image", replay_in.image, "RGB image (PNG)")->required()->check(CLI::ExistingFile);
    replay->add_option("--depth", replay_in.depth, "registered 16-bit depth PNG (mm)")->check(CLI::ExistingFile);
    replay->add_option("--transcript", replay_transcript, "recorded transcript")->required()->check(CLI::ExistingFile);
    replay->add_option("--expect", replay_expect, "recorded result JSON that must match byte for byte")
        ->check(CLI::ExistingFile);
    replay->add_option("--out", replay_out, "replayed result JSON path");
    replay_config.attach(replay);

    SynthFlags synth_flags;
    auto* synth = app.add_subcommand("synth", "write a deterministic synthetic RGB-D scene with annotation");
    synth->add_option("--scene", synth_flags.options.scene, "handle-hole | bar | blob");
    synth->add_option("--seed", synth_flags.options.seed, "generator seed");
    synth->add_option("--width", synth_flags.options.width, "image width");
    synth->add_option("--height", synth_flags.options.height, "image height");
    synth->add_option("--angle", synth_flags.options.angle_deg, "bar orientation in degrees");
    synth->add_option("--out-dir", synth_flags.out_dir, "output directory");
    synth->add_option("--id", synth_flags.id, "image id (default: scene name)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*predict) return cmd_predict(predict_in, predict_oracle, predict_config, predict_out, overlay_out);
        if (*batch) return cmd_batch_eval(batch_flags, batch_oracle, batch_config);
        if (*record) return cmd_record(record_in, record_oracle, record_config, record_transcript, record_out);
        if (*replay) return cmd_replay(replay_in, replay_config, replay_transcript, replay_expect, replay_out);
        if (*synth) return cmd_synth(synth_flags);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const og::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
