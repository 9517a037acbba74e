// panolab: data generation, two-phase training, enhanced sampling and
// evaluation for the panoramic video lab. Every command that produces files
// also writes a JSON manifest; `replay` re-runs one and checks its outputs.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "panolab/enhance.hpp"
#include "panolab/error.hpp"
#include "panolab/io.hpp"
#include "panolab/sphere.hpp"
#include "panolab/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace panolab;

namespace {

constexpr int schedule_length = 1000;

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string seam_line(const SeamReport& r)
{
    return "seam_gap " + fmt("%.9g", r.seam_gap) + " interior_gap " + fmt("%.9g", r.interior_gap) + " ratio " +
           fmt("%.9g", r.ratio);
}

std::vector<char> read_bytes(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw IoError(IoError::Kind::open, "cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// FNV-1a, enough to tell whether a replay reproduced a file.
std::string fingerprint(const fs::path& p)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : read_bytes(p)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_text(const fs::path& p, const std::string& text)
{
    if (p.has_parent_path())
        fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out)
        throw IoError(IoError::Kind::open, "cannot write " + p.string());
}

// What a command did, serialized without timestamps so reruns match byte
// for byte. Output keys are relative to the command's output root.
struct Manifest {
    json doc;
    fs::path root;

    Manifest(const std::string& command, const std::vector<std::string>& argv, fs::path out_root)
        : root(std::move(out_root))
    {
        doc["command"] = command;
        doc["argv"] = argv;
        doc["config"] = json::object();
        doc["seed"] = nullptr;
        doc["checkpoints"] = json::object();
        doc["metrics"] = json::object();
        doc["outputs"] = json::array();
    }

    void output(const fs::path& p)
    {
        doc["outputs"].push_back(
            {{"key", p.lexically_relative(root).generic_string()}, {"path", p.generic_string()}, {"fnv1a64", fingerprint(p)}});
    }

    void write(const fs::path& p) const { write_text(p, doc.dump(2) + "\n"); }
};

VideoTensor load_video_input(const fs::path& p)
{
    if (fs::is_directory(p))
        return read_frames_ppm(p);
    const std::vector<NamedTensor> e = load_tensors(p);
    if (e.empty())
        throw IoError(IoError::Kind::parse, p.string() + " holds no tensors");
    for (const NamedTensor& t : e)
        if (t.name == "video")
            return t.value;
    return e.front().value;
}

Dataset load_dataset(const fs::path& dir)
{
    Dataset d;
    for (int i = 0;; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "scene_%04d.p360", i);
        if (!fs::exists(dir / name))
            break;
        d.videos.push_back(find_tensor(load_tensors(dir / name), "video"));
        std::snprintf(name, sizeof name, "flow_%04d.p360", i);
        d.flows.push_back(find_tensor(load_tensors(dir / name), "flow"));
        Shape expect = d.videos.back().shape();
        expect.channels = 2;
        require_same_shape(expect, d.flows.back().shape(), name);
    }
    if (d.size() == 0)
        throw ArgumentError("no scene_0000.p360 in " + dir.string());
    return d;
}

json model_json(const Model& m)
{
    const auto& u = m.unet.channels;
    return {{"unet_channels", {u[0], u[1], u[2], u[3]}},
            {"frames", m.unet.frames},
            {"adapter_unshuffle", m.adapter.unshuffle_factor}};
}

// ---- gen-data ----

struct GenArgs {
    std::uint64_t seed = 0;
    int scenes = 16;
    int frames = 8;
    int height = 32;
    std::string out;
};

void cmd_gen_data(const GenArgs& a, const std::vector<std::string>& argv)
{
    if (a.height < 2 || a.height % 2 != 0)
        throw ArgumentError("--height must be even and >= 2, got " + std::to_string(a.height));
    if (a.scenes < 1 || a.frames < 1)
        throw ArgumentError("--scenes and --frames must be >= 1");
    const fs::path out(a.out);
    fs::create_directories(out);
    Manifest m("gen-data", argv, out);
    m.doc["config"] = {{"scenes", a.scenes}, {"frames", a.frames}, {"height", a.height}, {"width", 2 * a.height}};
    m.doc["seed"] = a.seed;
    const std::vector<std::uint64_t> seeds = scene_seeds(a.seed, a.scenes);
    for (int i = 0; i < a.scenes; ++i) {
        const SceneSpec spec = random_scene(seeds[static_cast<std::size_t>(i)], a.frames, a.height);
        const RenderedScene r = render_sequence(spec);
        char name[32];
        std::snprintf(name, sizeof name, "scene_%04d.txt", i);
        save_scene(out / name, spec);
        m.output(out / name);
        std::snprintf(name, sizeof name, "scene_%04d.p360", i);
        save_tensors(out / name, {{"video", r.video}});
        m.output(out / name);
        std::snprintf(name, sizeof name, "flow_%04d.p360", i);
        save_tensors(out / name, {{"flow", r.flow}});
        m.output(out / name);
    }
    m.write(out / "manifest.json");
    std::cout << "wrote " << a.scenes << " scenes to " << out.string() << "\n";
}

// ---- train ----

struct TrainArgs {
    std::string data;
    std::string phase = "backbone";
    int steps = 2000;
    double p_zero = 0.2;
    bool latitude_loss = false;
    bool rotate_augment = false;
    std::uint64_t seed = 0;
    std::string ckpt_in;
    std::string ckpt_out;
    double lr = 1e-3;
    int batch = 2;
    std::string log;
};

void cmd_train(const TrainArgs& a, const std::vector<std::string>& argv)
{
    const Phase phase = a.phase == "adapter" ? Phase::adapter : Phase::backbone;
    if (phase == Phase::adapter && a.ckpt_in.empty())
        throw ArgumentError("--phase adapter needs --ckpt-in with a trained backbone");
    const Dataset data = load_dataset(a.data);
    const Shape vs = data.videos.front().shape();

    bool adapter_created = false;
    Model model = a.ckpt_in.empty() ? lab_model(a.seed, vs.frames) : load_checkpoint(a.ckpt_in, a.seed, &adapter_created);
    if (model.unet.frames != vs.frames)
        throw ShapeError("checkpoint expects " + std::to_string(model.unet.frames) + " frames, data has " +
                         std::to_string(vs.frames));

    TrainConfig cfg;
    cfg.steps = a.steps;
    cfg.batch = a.batch;
    cfg.lr = a.lr;
    cfg.p_zero = a.p_zero;
    cfg.latitude_loss = a.latitude_loss;
    cfg.rotation_augment = a.rotate_augment;
    cfg.seed = a.seed;
    validate_config(cfg);

    const fs::path ckpt_out(a.ckpt_out);
    const fs::path log_path = a.log.empty() ? fs::path(a.ckpt_out + ".loss.txt") : fs::path(a.log);
    std::string log;
    const std::vector<double> losses =
        train_phase(model, data, linear_beta_schedule(schedule_length), cfg, phase, [&](int step, double loss) {
            log += std::to_string(step) + " " + fmt("%.9g", loss) + "\n";
        });
    write_text(log_path, log);
    if (ckpt_out.has_parent_path())
        fs::create_directories(ckpt_out.parent_path());
    save_checkpoint(ckpt_out, model);

    const fs::path root = ckpt_out.parent_path();
    Manifest m("train", argv, root);
    m.doc["config"] = {{"phase", a.phase},
                       {"steps", a.steps},
                       {"batch", a.batch},
                       {"lr", a.lr},
                       {"p_zero", a.p_zero},
                       {"latitude_loss", a.latitude_loss},
                       {"rotate_augment", a.rotate_augment},
                       {"scenes", data.size()},
                       {"model", model_json(model)}};
    m.doc["seed"] = a.seed;
    m.doc["checkpoints"] = {{"in", a.ckpt_in}, {"out", a.ckpt_out}, {"adapter_initialized", adapter_created}};
    if (!losses.empty()) {
        const std::size_t k = std::min<std::size_t>(100, losses.size());
        double first = 0.0, last = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            first += losses[i];
            last += losses[losses.size() - k + i];
        }
        m.doc["metrics"] = {{"first_mean", first / k}, {"last_mean", last / k}, {"window", k}};
    }
    m.output(ckpt_out);
    m.output(log_path);
    m.write(a.ckpt_out + ".manifest.json");
    std::cout << "trained " << a.steps << " steps, checkpoint " << ckpt_out.string() << "\n";
}

// ---- sample ----

struct SampleArgs {
    std::string ckpt;
    std::string flow;
    int steps = 25;
    double theta = 1.570796;
    std::string rotate = "on";
    std::string circular_late = "on";
    float adapter_weight = 1.0f;
    std::uint64_t seed = 0;
    std::string out;
    int height = 0;
};

void cmd_sample(const SampleArgs& a, const std::vector<std::string>& argv)
{
    if (a.steps < 1)
        throw ArgumentError("--steps must be >= 1");
    bool adapter_created = false;
    Model model = load_checkpoint(a.ckpt, 0, &adapter_created);

    std::optional<VideoTensor> cond;
    int height = a.height > 0 ? a.height : 32;
    if (!a.flow.empty()) {
        const std::vector<NamedTensor> e = load_tensors(a.flow);
        const VideoTensor& flow = find_tensor(e, "flow");
        const Shape& fs_ = flow.shape();
        if (fs_.batch != 1 || fs_.channels != 2 || fs_.frames != model.unet.frames)
            throw ShapeError("flow " + fs_.str() + " does not fit a " + std::to_string(model.unet.frames) +
                             "-frame model; expected (1, 2, " + std::to_string(model.unet.frames) + ", H, 2H)");
        if (a.height > 0 && a.height != fs_.height)
            throw ShapeError("--height " + std::to_string(a.height) + " disagrees with flow height " +
                             std::to_string(fs_.height));
        height = fs_.height;
        cond = flow_to_condition(flow);
    }
    const Shape latent{1, model.unet.in_channels, model.unet.frames, height, 2 * height};
    if (cond && cond->shape().width != latent.width)
        throw ShapeError("flow " + cond->shape().str() + " is not 2:1");

    std::mt19937_64 rng(a.seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    VideoTensor z(latent);
    for (float& v : z.data())
        v = normal(rng);

    EnhancementConfig cfg;
    cfg.theta = a.theta;
    cfg.rotate_latents = a.rotate == "on";
    cfg.circular_late_half = a.circular_late == "on";
    cfg.adapter_weight = a.adapter_weight;
    VideoTensor video = sample_with_enhancements(model, cond, z, linear_beta_schedule(schedule_length), a.steps, cfg);
    for (float& v : video.data())
        v = 0.5f * (v + 1.0f);

    const fs::path out(a.out);
    fs::create_directories(out);
    Manifest m("sample", argv, out);
    const SeamReport seam = seam_metric(video);
    save_tensors(out / "video.p360", {{"video", video}});
    m.output(out / "video.p360");
    for (const fs::path& p : write_frames_ppm(video, out / "frames"))
        m.output(p);
    write_text(out / "seam.txt", seam_line(seam) + "\n");
    m.output(out / "seam.txt");

    m.doc["config"] = {{"steps", a.steps},
                       {"theta", a.theta},
                       {"rotate", a.rotate},
                       {"circular_late", a.circular_late},
                       {"adapter_weight", a.adapter_weight},
                       {"flow", a.flow},
                       {"height", height},
                       {"model", model_json(model)}};
    m.doc["seed"] = a.seed;
    m.doc["checkpoints"] = {{"in", a.ckpt}, {"adapter_initialized", adapter_created}};
    m.doc["metrics"] = {{"seam_gap", seam.seam_gap}, {"interior_gap", seam.interior_gap}, {"ratio", seam.ratio},
                        {"finite", video.all_finite()}};
    m.write(out / "manifest.json");
    std::cout << seam_line(seam) << "\n";
}

// ---- eval ----

struct EvalArgs {
    std::string input;
    double yaw = 0.0;
    double pitch = 0.0;
    double fov = 1.570796;
    int size = 64;
    std::string out;
};

void cmd_eval_seam(const EvalArgs& a) { std::cout << seam_line(seam_metric(load_video_input(a.input))) << "\n"; }

void cmd_eval_project(const EvalArgs& a, const std::vector<std::string>& argv)
{
    SphereCamera cam;
    cam.yaw = a.yaw;
    cam.pitch = a.pitch;
    cam.fov = a.fov;
    cam.out_size = a.size;
    const VideoTensor view = erp_to_perspective(load_video_input(a.input), cam);
    const fs::path out(a.out);
    Manifest m("eval project", argv, out);
    for (const fs::path& p : write_frames_ppm(view, out))
        m.output(p);
    m.doc["config"] = {{"input", a.input}, {"yaw", a.yaw}, {"pitch", a.pitch}, {"fov", a.fov}, {"size", a.size}};
    m.write(out / "manifest.json");
}

void cmd_eval_duplicate(const EvalArgs& a, const std::vector<std::string>& argv)
{
    const VideoTensor wide = duplicate_side_by_side(load_video_input(a.input));
    const fs::path out(a.out);
    fs::create_directories(out);
    Manifest m("eval duplicate", argv, out);
    save_tensors(out / "video.p360", {{"video", wide}});
    m.output(out / "video.p360");
    for (const fs::path& p : write_frames_ppm(wide, out / "frames"))
        m.output(p);
    m.doc["config"] = {{"input", a.input}};
    m.write(out / "manifest.json");
}

int run(const std::vector<std::string>& argv);

// ---- replay ----

// Re-executes a manifest's argv. With --out, every output lands under the
// new directory instead. Then every recorded fingerprint is checked.
int cmd_replay(const std::string& manifest_path, const std::string& out_override)
{
    std::ifstream in(manifest_path);
    if (!in)
        throw IoError(IoError::Kind::open, "cannot open " + manifest_path);
    const json doc = json::parse(in);
    std::vector<std::string> argv = doc.at("argv").get<std::vector<std::string>>();
    if (argv.empty() || argv.front() == "replay")
        throw ArgumentError("manifest " + manifest_path + " has no replayable command");

    if (!out_override.empty()) {
        const fs::path dir(out_override);
        for (std::size_t i = 0; i + 1 < argv.size(); ++i) {
            if (argv[i] == "--out")
                argv[i + 1] = dir.string();
            else if (argv[i] == "--ckpt-out" || argv[i] == "--log")
                argv[i + 1] = (dir / fs::path(argv[i + 1]).filename()).string();
        }
    }
    const int rc = run(argv);
    if (rc != 0)
        return rc;

    int mismatched = 0;
    for (const json& o : doc.at("outputs")) {
        const fs::path p = out_override.empty() ? fs::path(o.at("path").get<std::string>())
                                                : fs::path(out_override) / o.at("key").get<std::string>();
        if (!fs::exists(p) || fingerprint(p) != o.at("fnv1a64").get<std::string>()) {
            std::cerr << "panolab: replay mismatch: " << p.string() << "\n";
            ++mismatched;
        }
    }
    if (mismatched)
        return 1;
    std::cout << "replay: " << doc.at("outputs").size() << " outputs identical\n";
    return 0;
}

int run(const std::vector<std::string>& argv)
{
    CLI::App app{"Panoramic video diffusion lab"};
    app.name("panolab");
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen-data", "Render synthetic rotating-sphere scenes with exact flow");
    g->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
    g->add_option("--scenes", gen.scenes, "Number of scenes")->capture_default_str();
    g->add_option("--frames", gen.frames, "Frames per scene")->capture_default_str();
    g->add_option("--height", gen.height, "ERP height, must be even (width = 2 x height)")->capture_default_str();
    g->add_option("--out", gen.out, "Output directory")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train the backbone or the adapter for a number of steps");
    t->add_option("--data", tr.data, "Directory written by gen-data")->required();
    t->add_option("--phase", tr.phase, "backbone or adapter")
        ->check(CLI::IsMember({"backbone", "adapter"}))
        ->capture_default_str();
    t->add_option("--steps", tr.steps, "Optimizer steps")->capture_default_str();
    t->add_option("--p-zero", tr.p_zero, "Probability of replacing the flow by zeros")->capture_default_str();
    t->add_flag("--latitude-loss", tr.latitude_loss, "Weight the loss by cos(latitude)");
    t->add_flag("--rotate-augment", tr.rotate_augment, "Random whole-column rotations of video and flow");
    t->add_option("--seed", tr.seed, "Training seed")->capture_default_str();
    t->add_option("--ckpt-in", tr.ckpt_in, "Checkpoint to start from (required for the adapter phase)");
    t->add_option("--ckpt-out", tr.ckpt_out, "Checkpoint to write")->required();
    t->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
    t->add_option("--batch", tr.batch, "Batch size")->capture_default_str();
    t->add_option("--log", tr.log, "Loss log, one 'step loss' line per step (default <ckpt-out>.loss.txt)");

    SampleArgs sa;
    auto* s = app.add_subcommand("sample", "DDIM sampling with latent rotation and late circular padding");
    s->add_option("--ckpt", sa.ckpt, "Checkpoint")->required();
    s->add_option("--flow", sa.flow, "Flow container used as the motion condition");
    s->add_option("--steps", sa.steps, "DDIM steps")->capture_default_str();
    s->add_option("--theta", sa.theta, "Latent rotation per step in radians (1.570796 = 90 degrees)")
        ->capture_default_str();
    s->add_option("--rotate", sa.rotate, "Per-step latent rotation")
        ->check(CLI::IsMember({"on", "off"}))
        ->capture_default_str();
    s->add_option("--circular-late", sa.circular_late, "Circular padding for the late half of the steps")
        ->check(CLI::IsMember({"on", "off"}))
        ->capture_default_str();
    s->add_option("--adapter-weight", sa.adapter_weight, "Adapter feature weight")->capture_default_str();
    s->add_option("--seed", sa.seed, "Noise seed")->capture_default_str();
    s->add_option("--out", sa.out, "Output directory")->required();
    s->add_option("--height", sa.height, "Sample height without a flow (default 32)");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Seam metric, perspective projection or side-by-side duplication");
    e->add_option("--input", ev.input, "Video container or frame directory")->required();
    e->require_subcommand(1);
    auto* e_seam = e->add_subcommand("seam", "Print seam_gap, interior_gap and ratio");
    auto* e_proj = e->add_subcommand("project", "Perspective views of every frame");
    e_proj->add_option("--yaw", ev.yaw, "Radians (1.570796 = 90 degrees)")->capture_default_str();
    e_proj->add_option("--pitch", ev.pitch, "Radians, positive looks up")->capture_default_str();
    e_proj->add_option("--fov", ev.fov, "Field of view in radians (1.570796 = 90 degrees)")->capture_default_str();
    e_proj->add_option("--size", ev.size, "Output side in pixels")->capture_default_str();
    e_proj->add_option("--out", ev.out, "Output directory")->required();
    auto* e_dup = e->add_subcommand("duplicate", "Concatenate each frame with itself horizontally");
    e_dup->add_option("--out", ev.out, "Output directory")->required();

    std::string manifest, replay_out;
    auto* r = app.add_subcommand("replay", "Re-run a manifest and verify its outputs");
    r->add_option("--manifest", manifest, "manifest.json from an earlier run")->required();
    r->add_option("--out", replay_out, "Write outputs under this directory instead");

    try {
        std::vector<std::string> reversed(argv.rbegin(), argv.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        std::cerr << app.help();
        return rc == 0 ? 2 : rc;
    }

    if (*g)
        cmd_gen_data(gen, argv);
    else if (*t)
        cmd_train(tr, argv);
    else if (*s)
        cmd_sample(sa, argv);
    else if (*e_seam)
        cmd_eval_seam(ev);
    else if (*e_proj)
        cmd_eval_project(ev, argv);
    else if (*e_dup)
        cmd_eval_duplicate(ev, argv);
    else if (*r)
        return cmd_replay(manifest, replay_out);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    try {
        return run(std::vector<std::string>(argv + 1, argv + argc));
    } catch (const std::exception& ex) {
        std::cerr << "panolab: error: " << ex.what() << "\n";
        return 1;
    }
}
