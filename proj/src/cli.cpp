#include "deformreg/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "deformreg/diffnet.hpp"
#include "deformreg/gradcheck.hpp"
#include "deformreg/metrics.hpp"
#include "deformreg/parallel.hpp"
#include "deformreg/phantom.hpp"
#include "deformreg/projector.hpp"
#include "deformreg/rng.hpp"
#include "deformreg/solvers.hpp"
#include "deformreg/volgrid.hpp"
#include "deformreg/warpfield.hpp"

namespace fs = std::filesystem;

namespace deformreg {

int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Usage: return kExitUsage;
    case ErrorKind::Numerical: return kExitNumerical;
    case ErrorKind::Io:
    case ErrorKind::SizeMismatch: return kExitIo;
    case ErrorKind::InvalidDims:
    case ErrorKind::NonFinite:
    case ErrorKind::DimsMismatch:
    case ErrorKind::Validation: return kExitValidation;
    }
    return kExitValidation;
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot read '" + path.string() + "'");
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
}

namespace {

constexpr const char* kManifest = "manifest.txt";
constexpr const char* kTiming = "timing.txt";
constexpr const char* kConfigEcho = "resolved_config.ini";

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) fail(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

} // namespace

std::string build_manifest(const fs::path& dir) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) {
            const std::string name = e.path().filename().string();
            if (name != kManifest && name != kTiming) names.push_back(name);
        }
    std::sort(names.begin(), names.end());
    std::ostringstream os;
    for (const auto& n : names) os << sha256_file(dir / n) << "  " << n << '\n';
    return os.str();
}

namespace {

struct Common {
    std::uint64_t seed = 0;
    std::string out = "out";
    int threads = 0;
    int size = 64;
};

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

int resolve_threads(int flag) {
    if (flag > 0) return flag;
    if (const char* env = std::getenv("DEFORMREG_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1)
            fail(ErrorKind::Usage, std::string("DEFORMREG_THREADS must be a positive integer, got '") + env + "'");
        return static_cast<int>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::string option_value(const CLI::Option* opt) {
    if (opt->get_expected_max() == 0) return opt->count() > 0 ? "true" : "false";
    if (opt->count() > 0) {
        std::string s;
        for (const auto& r : opt->results()) s += (s.empty() ? "" : ",") + r;
        return s;
    }
    return opt->get_default_str();
}

// Echo of every option that influences results. --out, --threads and
// --config are left out so equivalent runs echo identically.
std::string echo_config(const CLI::App& app, const CLI::App& sub) {
    std::ostringstream os;
    auto dump = [&](const CLI::App& a) {
        for (const CLI::Option* opt : a.get_options()) {
            const std::string name = opt->get_single_name();
            if (name == "help" || name == "config" || name == "out" || name == "threads") continue;
            os << name << " = " << option_value(opt) << '\n';
        }
    };
    dump(app);
    os << '[' << sub.get_name() << "]\n";
    dump(sub);
    return os.str();
}

class Output {
public:
    Output(const std::string& dir, const std::string& config_echo) : dir_(dir), t0_(std::chrono::steady_clock::now()) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec || !fs::is_directory(dir_)) fail(ErrorKind::Io, "cannot create output directory '" + dir + "'");
        write_text(dir_ / kConfigEcho, config_echo);
    }

    fs::path operator/(const std::string& name) const { return dir_ / name; }

    void finish() {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
        write_text(dir_ / kTiming, "wall_seconds = " + fmt(secs) + "\n");
        write_text(dir_ / kManifest, build_manifest(dir_));
    }

private:
    fs::path dir_;
    std::chrono::steady_clock::time_point t0_;
};

void export_slices(const VolumeGrid& v, const Output& out, const std::string& stem) {
    write_pgm(extract_slice(v, SliceAxis::Coronal, v.dims.ny / 2), out / (stem + "_coronal.pgm"));
    write_pgm(extract_slice(v, SliceAxis::Sagittal, v.dims.nx / 2), out / (stem + "_sagittal.pgm"));
    write_pgm(extract_slice(v, SliceAxis::Axial, v.dims.nz / 2), out / (stem + "_axial.pgm"));
}

void write_report(const SolveReport& rep, const Output& out, const std::string& stem) {
    write_text(out / (stem + "_history.csv"), rep.history_csv());
    write_text(out / (stem + "_summary.txt"), rep.summary(false));
}

// ---------------------------------------------------------------------------

struct PhantomArgs {
    double amplitude_si = -1;
    double amplitude_ap = -1;
    bool for_training = false;
    int levels = 3;
    bool slices = false;
};

void cmd_phantom(const Common& c, const PhantomArgs& a, const std::string& echo, std::ostream& log) {
    PhantomSpec spec;
    spec.n = c.size;
    spec.validate();
    if (a.for_training) {
        if (a.levels < 1) fail(ErrorKind::Validation, "--levels must be at least 1");
        const int step = 1 << a.levels;
        if (spec.n % step != 0)
            fail(ErrorKind::Validation, "grid size " + std::to_string(spec.n) + " is not divisible by 2^" +
                                            std::to_string(a.levels) + " = " + std::to_string(step) +
                                            "; choose --size as a multiple of " + std::to_string(step));
    }
    RespiratoryModel model = RespiratoryModel::for_grid(spec.n);
    if (a.amplitude_si >= 0) model.amplitude_si = a.amplitude_si;
    if (a.amplitude_ap >= 0) model.amplitude_ap = a.amplitude_ap;

    Output out(c.out, echo);
    const auto frames = generate_4dct(spec, model);
    for (const auto& f : frames) {
        const std::string stem = "frame_t" + std::to_string(f.phase);
        save_volume(f.volume, out / (stem + ".mhd"));
        save_labels(f.labels, out / (stem + "_labels.mhd"));
        save_field(f.u_gt, out / (stem + "_u.mhd"));
        if (a.slices) export_slices(f.volume, out, stem);
    }
    out.finish();
    log << "wrote " << frames.size() << " frames (" << to_string(spec.dims()) << ") to " << c.out << '\n';
}

// ---------------------------------------------------------------------------

struct DrrArgs {
    std::string input;
    std::string name;
};

void cmd_drr(const Common& c, const DrrArgs& a, const std::string& echo, std::ostream& log) {
    const VolumeGrid v = load_volume(a.input);
    const std::string stem = a.name.empty() ? fs::path(a.input).stem().string() + "_drr" : a.name;
    Output out(c.out, echo);
    const Drr drr = render_drr(v);
    save_image(drr.image, out / (stem + ".mhd"));
    write_pgm(drr.image, out / (stem + ".pgm"));
    write_text(out / (stem + "_geometry.txt"),
               "width = " + std::to_string(drr.geometry.width()) + "\nheight = " + std::to_string(drr.geometry.height()) +
                   "\nraw_min = " + fmt(drr.geometry.raw_min) + "\nraw_max = " + fmt(drr.geometry.raw_max) + "\n");
    out.finish();
    log << "wrote " << stem << " (" << drr.image.width << "x" << drr.image.height << ") to " << c.out << '\n';
}

// ---------------------------------------------------------------------------

struct RegisterArgs {
    std::string mode;
    std::string source;
    std::string target;
    std::string target_drr;
    std::string source_labels;
    std::string target_labels;
    std::string u_gt;
    std::string checkpoint;
    bool projection_only = false;
    double lambda = 0.05;
    double gamma = 0.0;
    int steps = 300;
    double lr = 0.1;
    int pyramid = 1;
    int restarts = 3;
    int max_evals = 600;
    bool masked_mae = false;
};

void cmd_register(const Common& c, const RegisterArgs& a, const std::string& echo, std::ostream& log) {
    const VolumeGrid v_s = load_volume(a.source);
    std::optional<VolumeGrid> v_t;
    if (!a.target.empty()) {
        v_t = load_volume(a.target);
        require_same_dims(v_s.dims, v_t->dims, "--target");
    }
    Image2D i_t;
    if (!a.target_drr.empty()) {
        i_t = load_image(a.target_drr);
        validate_unit_image(i_t);
        if (i_t.width != v_s.dims.nx || i_t.height != v_s.dims.nz)
            fail(ErrorKind::DimsMismatch, "--target-drr is " + std::to_string(i_t.width) + "x" +
                                              std::to_string(i_t.height) + " but the source projects to " +
                                              std::to_string(v_s.dims.nx) + "x" + std::to_string(v_s.dims.nz));
    } else if (v_t) {
        i_t = render_drr(*v_t).image;
    } else {
        fail(ErrorKind::Usage, "register needs --target (volume) or --target-drr (image)");
    }
    const Image2D i_s = render_drr(v_s).image;
    std::optional<DisplacementField> u_gt;
    if (!a.u_gt.empty()) u_gt = load_field(a.u_gt);
    LossWeights w{a.lambda, a.gamma};
    w.validate();

    Output out(c.out, echo);
    DisplacementField u;
    VolumeGrid v_def;
    SolveReport rep;

    if (a.mode == "direct") {
        DirectOptions o;
        o.mode = a.projection_only ? DirectMode::ProjectionOnly : DirectMode::VolumeSupervised;
        if (o.mode == DirectMode::VolumeSupervised && !v_t)
            fail(ErrorKind::Usage, "direct mode without --projection-only needs --target; pass --projection-only "
                                   "to register against --target-drr alone");
        if (w.gamma_dvf > 0 && !u_gt) fail(ErrorKind::Usage, "--gamma > 0 needs --u-gt");
        o.steps = a.steps;
        o.lr = a.lr;
        o.pyramid_levels = a.pyramid;
        o.seed = c.seed;
        auto r = register_direct(v_s, i_s, i_t, v_t ? &*v_t : nullptr, u_gt ? &*u_gt : nullptr, w, o);
        u = std::move(r.u);
        v_def = std::move(r.v_def);
        rep = std::move(r.report);
    } else if (a.mode == "unet") {
        if (a.checkpoint.empty()) fail(ErrorKind::Usage, "unet mode needs --checkpoint (written by 'train')");
        const Checkpoint ck = load_checkpoint(a.checkpoint);
        auto inf = infer_unet(ck.params, v_s, i_s, i_t);
        u = std::move(inf.u);
        v_def = std::move(inf.v_def);
        rep.seed = c.seed;
        rep.config = {{"solver", "unet"}, {"checkpoint_epoch", std::to_string(ck.epoch)}};
        LossTerms before, after;
        if (v_t) {
            TrainingSample s{v_s, i_s, i_t, *v_t, std::nullopt};
            const LossWeights lw{a.lambda, 0.0};
            before = evaluate_unet_loss(init_unet_params<float>(ck.params.config, 0), s, lw);
            after = evaluate_unet_loss(ck.params, s, lw);
        } else {
            before.total = before.mse = image_mse_loss(i_t, i_s).value;
            after.total = after.mse = image_mse_loss(i_t, render_drr(v_def).image).value;
        }
        rep.record(0, before);
        rep.record(1, after);
        rep.initial_loss = before.total;
        rep.final_loss = after.total;
        rep.best_step = 1;
    } else if (a.mode == "rigid") {
        RigidOptions o;
        o.restarts = a.restarts;
        o.max_evaluations = a.max_evals;
        o.seed = c.seed;
        auto r = register_rigid(v_s, i_t, o);
        const auto p = r.params;
        write_text(out / "rigid_params.txt", "tx = " + fmt(p.tx) + "\nty = " + fmt(p.ty) + "\ntz = " + fmt(p.tz) +
                                                 "\nrx = " + fmt(p.rx) + "\nry = " + fmt(p.ry) + "\nrz = " + fmt(p.rz) +
                                                 "\n");
        u = rigid_field(v_s.dims, p);
        v_def = std::move(r.v_def);
        rep = std::move(r.report);
        log << "rigid: t = (" << p.tx << ", " << p.ty << ", " << p.tz << ") vox, r = (" << p.rx << ", " << p.ry
            << ", " << p.rz << ") deg\n";
    } else if (a.mode == "2ddf") {
        Register2dOptions o;
        o.steps = a.steps;
        o.lr = a.lr;
        o.seed = c.seed;
        auto r = register_2d(i_s, i_t, w, o);
        u = field_from_2ddf(r.u, v_s.dims);
        v_def = apply_2ddf_to_volume(v_s, r.u);
        rep = std::move(r.report);
    } else {
        fail(ErrorKind::Usage, "unknown mode '" + a.mode + "' (expected direct, unet, rigid or 2ddf)");
    }

    save_volume(v_def, out / "v_def.mhd");
    save_field(u, out / "u.mhd");
    export_slices(v_def, out, "v_def");
    std::optional<LabelVolume> labels_def;
    if (!a.source_labels.empty()) {
        const LabelVolume ls = load_labels(a.source_labels);
        require_same_dims(v_s.dims, ls.dims, "--source-labels");
        labels_def = warp_labels(ls, u);
        save_labels(*labels_def, out / "labels_def.mhd");
    }
    if (v_t) {
        rep.set_metric("mae_initial", a.masked_mae ? mae_masked(*v_t, v_s, body_mask(*v_t)) : mae(*v_t, v_s));
        rep.set_metric("mae_final", a.masked_mae ? mae_masked(*v_t, v_def, body_mask(*v_t)) : mae(*v_t, v_def));
        if (labels_def && !a.target_labels.empty()) {
            const LabelVolume lt = load_labels(a.target_labels);
            const LabelVolume ls = load_labels(a.source_labels);
            rep.set_metric("dsc_liver_initial", dsc(lt, ls, Label::Liver));
            rep.set_metric("dsc_liver_final", dsc(lt, *labels_def, Label::Liver));
            rep.set_metric("dsc_stomach_initial", dsc(lt, ls, Label::Stomach));
            rep.set_metric("dsc_stomach_final", dsc(lt, *labels_def, Label::Stomach));
        }
    }
    write_report(rep, out, "report");
    out.finish();
    log << a.mode << ": loss " << rep.initial_loss << " -> " << rep.final_loss << " (" << rep.history.size()
        << " recorded steps)\n";
    for (const auto& [k, v] : rep.metrics) log << "  " << k << " = " << v << '\n';
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    int pairs = 20;
    double scale_lo = 0.6;
    double scale_hi = 1.4;
    int phase = 50;
    int epochs = 200;
    int batch = 4;
    double lr = 1e-4;
    double lambda = 0.05;
    double gamma = 0.0;
    int levels = 3;
    std::vector<int> widths{16, 32, 32};
    std::string packing = "extreme";
    int checkpoint_every = 0;
    std::string resume;
};

UNetConfig make_unet_config(int levels, const std::vector<int>& widths, const std::string& packing) {
    UNetConfig cfg;
    cfg.levels = levels;
    cfg.widths = widths;
    cfg.packing = packing == "split" ? PackingMode::SplitHalves : PackingMode::ExtremePlanes;
    cfg.validate();
    return cfg;
}

void cmd_train(const Common& c, const TrainArgs& a, const std::string& echo, std::ostream& log) {
    const UNetConfig cfg = make_unet_config(a.levels, a.widths, a.packing);
    cfg.validate_input({c.size, c.size, c.size});
    LossWeights w{a.lambda, a.gamma};
    w.validate();
    PhantomSpec spec;
    spec.n = c.size;

    TrainOptions o;
    o.epochs = a.epochs;
    o.batch = a.batch;
    o.adam.lr = a.lr;
    o.seed = c.seed;
    o.checkpoint_every = a.checkpoint_every;
    if (!a.resume.empty()) o.resume = load_checkpoint(a.resume);

    Output out(c.out, echo);
    o.on_checkpoint = [&](const Checkpoint& ck) {
        std::ostringstream name;
        name << "ckpt_e" << std::setw(4) << std::setfill('0') << ck.epoch << ".ckpt";
        save_checkpoint(ck, out / name.str());
    };

    const auto cases = make_phantom_cases(spec, RespiratoryModel::for_grid(spec.n), a.pairs, c.seed, a.scale_lo,
                                          a.scale_hi, a.phase);
    std::vector<TrainingSample> data;
    for (const auto& pc : cases) data.push_back(to_training_sample(pc, w.gamma_dvf > 0));
    const TrainResult r = train_unet(data, cfg, w, o);

    Checkpoint model{r.params, AdamState<float>{r.last.adam.options, r.last.adam.step, {}, {}}, r.last.seed,
                     r.last.epoch};
    save_checkpoint(model, out / "model.ckpt");
    save_checkpoint(r.last, out / "last.ckpt");
    write_report(r.report, out, "train");
    std::ostringstream epochs;
    epochs << std::setprecision(10) << "epoch,mean_loss\n";
    for (std::size_t e = 0; e < r.epoch_mean_loss.size(); ++e) epochs << e + 1 << ',' << r.epoch_mean_loss[e] << '\n';
    write_text(out / "epoch_loss.csv", epochs.str());
    out.finish();
    log << "trained " << r.last.epoch << " epochs on " << data.size() << " pairs: loss " << r.report.initial_loss
        << " -> " << r.report.final_loss << '\n';
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string target;
    std::string target_labels;
    std::string moved;
    std::string moved_labels;
    std::string checkpoint;
    int cases = 4;
    double scale_lo = 0.6;
    double scale_hi = 1.4;
    int phase = 50;
    bool with_direct = false;
    bool masked_mae = false;
    int steps = 300;
    double lr = 0.1;
    double lambda = 0.05;
    int restarts = 3;
};

void cmd_evaluate(const Common& c, const EvaluateArgs& a, const std::string& echo, std::ostream& log) {
    std::vector<MethodSummary> columns;
    if (!a.moved.empty() || !a.target.empty()) {
        if (a.moved.empty() || a.target.empty() || a.moved_labels.empty() || a.target_labels.empty())
            fail(ErrorKind::Usage, "single-pair evaluation needs --target, --target-labels, --moved and --moved-labels");
        const VolumeGrid vt = load_volume(a.target), vm = load_volume(a.moved);
        const LabelVolume lt = load_labels(a.target_labels), lm = load_labels(a.moved_labels);
        Output out(c.out, echo);
        auto rep = evaluate_case(vt, lt, vm, lm, a.masked_mae);
        rep.case_id = fs::path(a.moved).stem().string();
        rep.phase = a.phase;
        columns.push_back(summarize("Result", {rep}));
        write_text(out / "table.txt", format_table(columns));
        write_text(out / "results.csv", format_csv(columns));
        out.finish();
        log << format_table(columns);
        return;
    }

    PhantomSpec spec;
    spec.n = c.size;
    std::optional<Checkpoint> ck;
    if (!a.checkpoint.empty()) {
        ck = load_checkpoint(a.checkpoint);
        ck->params.config.validate_input(spec.dims());
    }
    Output out(c.out, echo);
    const auto cases = make_phantom_cases(spec, RespiratoryModel::for_grid(spec.n), a.cases,
                                          derive_seed(c.seed, 0x4556414C), a.scale_lo, a.scale_hi, a.phase);
    std::map<std::string, std::vector<EvalReport>> by_method;
    std::vector<std::string> order{"Initial", "Rigid Reg", "2D-DF"};
    if (a.with_direct) order.push_back("Direct");
    if (ck) order.push_back("Proposed");
    const LossWeights w{a.lambda, 0.0};

    for (const auto& pc : cases) {
        auto add = [&](const std::string& method, const VolumeGrid& v, const DisplacementField& u) {
            auto rep = evaluate_case(pc.target, pc.target_labels, v, warp_labels(pc.source_labels, u), a.masked_mae);
            rep.case_id = pc.id;
            rep.phase = pc.phase;
            by_method[method].push_back(rep);
        };
        add("Initial", pc.source, DisplacementField(pc.source.dims));

        RigidOptions ro;
        ro.restarts = a.restarts;
        ro.seed = c.seed;
        const auto rr = register_rigid(pc.source, pc.target_drr, ro);
        add("Rigid Reg", rr.v_def, rigid_field(pc.source.dims, rr.params));

        Register2dOptions o2;
        o2.steps = a.steps;
        o2.lr = a.lr;
        const auto r2 = register_2d(pc.source_drr, pc.target_drr, w, o2);
        add("2D-DF", apply_2ddf_to_volume(pc.source, r2.u), field_from_2ddf(r2.u, pc.source.dims));

        if (a.with_direct) {
            DirectOptions od;
            od.mode = DirectMode::ProjectionOnly;
            od.steps = a.steps;
            od.lr = a.lr;
            od.seed = c.seed;
            const auto rd = register_direct(pc.source, pc.source_drr, pc.target_drr, nullptr, nullptr, w, od);
            add("Direct", rd.v_def, rd.u);
        }
        if (ck) {
            const auto inf = infer_unet(ck->params, pc.source, pc.source_drr, pc.target_drr);
            add("Proposed", inf.v_def, inf.u);
        }
        log << "evaluated " << pc.id << '\n';
    }
    for (const auto& m : order) columns.push_back(summarize(m, by_method[m]));
    write_text(out / "table.txt", format_table(columns));
    write_text(out / "results.csv", format_csv(columns));
    out.finish();
    log << format_table(columns);
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
    int instances = 20;
    double tolerance = 1e-4;
    double tolerance_f32 = 1e-3;
};

bool cmd_gradcheck(const Common& c, const GradcheckArgs& a, const std::string& echo, std::ostream& log) {
    GradcheckOptions o;
    o.instances = a.instances;
    o.seed = c.seed;
    o.tolerance = a.tolerance;
    o.tolerance_f32 = a.tolerance_f32;
    Output out(c.out, echo);
    const auto cases = run_gradchecks(o);
    std::ostringstream os;
    bool ok = true;
    for (const auto& k : cases) {
        os << (k.passed() ? "PASS " : "FAIL ") << std::left << std::setw(24) << k.name << " instances=" << k.instances
           << " failures=" << k.failures << " max_rel_error=" << std::setprecision(3) << k.max_rel_error
           << " tolerance=" << k.tolerance << '\n';
        ok = ok && k.passed();
    }
    write_text(out / "gradcheck.txt", os.str());
    out.finish();
    log << os.str();
    return ok;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Deformable 2D/3D registration toolkit: phantom data, DRRs, registration, training, evaluation"};
    app.name(args.empty() ? "deformreg" : fs::path(args[0]).filename().string());
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "INI/TOML file with option values; command-line flags take precedence");

    Common common;
    app.add_option("--seed", common.seed, "Seed for every random choice");
    app.add_option("--out", common.out, "Output directory");
    app.add_option("--threads", common.threads, "Worker threads (falls back to DEFORMREG_THREADS)")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--size", common.size, "Grid edge length n for generated phantoms")->check(CLI::PositiveNumber);

    PhantomArgs pa;
    auto* phantom = app.add_subcommand("phantom", "Generate the 10-phase respiratory phantom");
    phantom->add_option("--amplitude-si", pa.amplitude_si, "Superior-inferior amplitude in voxels (<0: scale with n)");
    phantom->add_option("--amplitude-ap", pa.amplitude_ap, "Anteroposterior amplitude in voxels (<0: scale with n)");
    phantom->add_flag("--for-training", pa.for_training, "Fail unless n is divisible by 2^levels");
    phantom->add_option("--levels", pa.levels, "U-Net levels assumed by --for-training");
    phantom->add_flag("--slices", pa.slices, "Also export mid-slice PGMs of every frame");

    DrrArgs da;
    auto* drr = app.add_subcommand("drr", "Render the front-view DRR of a volume");
    drr->add_option("input,--input", da.input, "Volume header (.mhd)")->required();
    drr->add_option("--name", da.name, "Output stem (default: <input stem>_drr)");

    RegisterArgs ra;
    auto* reg = app.add_subcommand("register", "Register a source volume to a target DRR");
    reg->add_option("--mode", ra.mode, "direct | unet | rigid | 2ddf")
        ->required()
        ->check(CLI::IsMember({"direct", "unet", "rigid", "2ddf"}));
    reg->add_option("--source", ra.source, "Source volume (.mhd)")->required();
    reg->add_option("--target", ra.target, "Target volume (.mhd), used for supervision and metrics");
    reg->add_option("--target-drr", ra.target_drr, "Target DRR (.mhd); rendered from --target when omitted");
    reg->add_option("--source-labels", ra.source_labels, "Source organ labels, warped with the result");
    reg->add_option("--target-labels", ra.target_labels, "Target organ labels for DSC");
    reg->add_option("--u-gt", ra.u_gt, "Ground-truth displacement field (.mhd)");
    reg->add_option("--checkpoint", ra.checkpoint, "Trained network (unet mode)");
    reg->add_flag("--projection-only", ra.projection_only, "direct mode: fit the target DRR only");
    reg->add_option("--lambda", ra.lambda, "Smoothness weight");
    reg->add_option("--gamma", ra.gamma, "Displacement supervision weight (needs --u-gt)");
    reg->add_option("--steps", ra.steps, "Optimiser steps (direct, 2ddf)");
    reg->add_option("--lr", ra.lr, "Adam step size (direct, 2ddf)");
    reg->add_option("--pyramid", ra.pyramid, "Coarse-to-fine levels (direct)");
    reg->add_option("--restarts", ra.restarts, "Nelder-Mead restarts (rigid)");
    reg->add_option("--max-evals", ra.max_evals, "Cost evaluations per restart (rigid)");
    reg->add_flag("--masked-mae", ra.masked_mae, "Restrict MAE to the target's body");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train the U-Net on generated phantom pairs");
    train->add_option("--pairs", ta.pairs, "Number of training pairs")->check(CLI::PositiveNumber);
    train->add_option("--scale-lo", ta.scale_lo, "Smallest amplitude scale");
    train->add_option("--scale-hi", ta.scale_hi, "Largest amplitude scale");
    train->add_option("--phase", ta.phase, "Target phase");
    train->add_option("--epochs", ta.epochs, "Total epochs (including those of a resumed run)");
    train->add_option("--batch", ta.batch, "Batch size")->check(CLI::PositiveNumber);
    train->add_option("--lr", ta.lr, "Adam step size");
    train->add_option("--lambda", ta.lambda, "Smoothness weight");
    train->add_option("--gamma", ta.gamma, "Displacement supervision weight");
    train->add_option("--levels", ta.levels, "Encoder levels");
    train->add_option("--widths", ta.widths, "Channels per level")->delimiter(',');
    train->add_option("--packing", ta.packing, "DRR packing: extreme | split")
        ->check(CLI::IsMember({"extreme", "split"}));
    train->add_option("--checkpoint-every", ta.checkpoint_every, "Write ckpt_eNNNN.ckpt every k epochs");
    train->add_option("--resume", ta.resume, "Continue from a checkpoint");

    EvaluateArgs ea;
    auto* eval = app.add_subcommand("evaluate", "MAE/DSC table over phantom cases or a single pair");
    eval->add_option("--target", ea.target, "Target volume (single-pair mode)");
    eval->add_option("--target-labels", ea.target_labels, "Target labels (single-pair mode)");
    eval->add_option("--moved", ea.moved, "Registered volume (single-pair mode)");
    eval->add_option("--moved-labels", ea.moved_labels, "Registered labels (single-pair mode)");
    eval->add_option("--checkpoint", ea.checkpoint, "Trained network for the Proposed column");
    eval->add_option("--cases", ea.cases, "Number of phantom cases")->check(CLI::PositiveNumber);
    eval->add_option("--scale-lo", ea.scale_lo, "Smallest amplitude scale");
    eval->add_option("--scale-hi", ea.scale_hi, "Largest amplitude scale");
    eval->add_option("--phase", ea.phase, "Target phase");
    eval->add_flag("--with-direct", ea.with_direct, "Add a projection-only direct optimisation column");
    eval->add_flag("--masked-mae", ea.masked_mae, "Restrict MAE to the target's body");
    eval->add_option("--steps", ea.steps, "Optimiser steps for 2D-DF and direct");
    eval->add_option("--lr", ea.lr, "Adam step size for 2D-DF and direct");
    eval->add_option("--lambda", ea.lambda, "Smoothness weight");
    eval->add_option("--restarts", ea.restarts, "Rigid restarts");

    GradcheckArgs ga;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every analytic gradient");
    gc->add_option("--instances", ga.instances, "Random instances per operation")->check(CLI::PositiveNumber);
    gc->add_option("--tolerance", ga.tolerance, "Relative error bound, binary64");
    gc->add_option("--tolerance-f32", ga.tolerance_f32, "Relative error bound, binary32");

    std::vector<std::string> rev(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
    std::reverse(rev.begin(), rev.end());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << app.get_name() << ": " << e.what() << "\n" << "run '" << app.get_name() << " --help' for usage\n";
        return kExitUsage;
    }

    try {
        set_thread_count(resolve_threads(common.threads));
        const CLI::App* sub = app.get_subcommands().front();
        const std::string echo = echo_config(app, *sub);
        if (sub == phantom) cmd_phantom(common, pa, echo, out);
        else if (sub == drr) cmd_drr(common, da, echo, out);
        else if (sub == reg) cmd_register(common, ra, echo, out);
        else if (sub == train) cmd_train(common, ta, echo, out);
        else if (sub == eval) cmd_evaluate(common, ea, echo, out);
        else if (sub == gc && !cmd_gradcheck(common, ga, echo, out)) {
            err << "gradcheck: at least one operation exceeded its tolerance\n";
            return kExitNumerical;
        }
        return kExitOk;
    } catch (const Error& e) {
        err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const fs::filesystem_error& e) {
        err << "error (io): " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    }
}

} // namespace deformreg
