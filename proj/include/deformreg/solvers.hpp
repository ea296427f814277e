#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "deformreg/diffnet.hpp"
#include "deformreg/losses.hpp"
#include "deformreg/phantom.hpp"
#include "deformreg/projector.hpp"
#include "deformreg/volgrid.hpp"
#include "deformreg/warpfield.hpp"

namespace deformreg {

struct SolveReport {
    struct Entry {
        std::size_t step = 0;
        LossTerms loss;
    };

    std::vector<Entry> history;
    std::size_t best_step = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;  // loss of the returned (best) iterate
    std::vector<std::pair<std::string, double>> metrics;
    std::vector<std::pair<std::string, std::string>> config;
    std::uint64_t seed = 0;
    double wall_seconds = 0.0;

    void record(std::size_t step, const LossTerms& loss);
    void set_metric(const std::string& key, double value);

    // step,L_total,L_MSE,L_smooth,L_DVF
    std::string history_csv() const;
    // "key = value" lines. Wall-clock time is left out unless asked for so
    // that identical runs serialise identically.
    std::string summary(bool include_timing = false) const;
};

// ---------------------------------------------------------------------------
// Direct displacement-field optimisation.

enum class DirectMode {
    VolumeSupervised,  // total_loss against the target volume
    ProjectionOnly,    // MSE between the warped volume's DRR and the target DRR
};

struct DirectOptions {
    DirectMode mode = DirectMode::VolumeSupervised;
    int steps = 300;
    double lr = 0.1;  // voxels per step, roughly
    // Coarse-to-fine levels; level k runs at half the resolution of k - 1.
    int pyramid_levels = 1;
    std::uint64_t seed = 0;
    // Projection normalisation for ProjectionOnly; defaults to the source DRR's.
    std::optional<ProjectionGeometry> geometry;
    // Called after every recorded step with the current field (may be empty).
    std::function<void(std::size_t, const DisplacementField&)> on_step;
};

struct DirectResult {
    DisplacementField u;
    VolumeGrid v_def;  // HU
    SolveReport report;
};

DirectResult register_direct(const VolumeGrid& v_s, const Image2D& i_s, const Image2D& i_t, const VolumeGrid* v_gt,
                             const DisplacementField* u_gt, const LossWeights& weights, const DirectOptions& opts);

// ---------------------------------------------------------------------------
// U-Net training and inference.

struct TrainingSample {
    VolumeGrid source;
    Image2D source_drr;
    Image2D target_drr;
    VolumeGrid target;
    std::optional<DisplacementField> u_gt;
};

struct TrainOptions {
    int epochs = 200;
    int batch = 4;
    AdamOptions adam{};
    std::uint64_t seed = 0;
    // Evaluate the whole training set after every epoch and return the best
    // parameters seen (including the initial ones).
    bool track_best = true;
    // Invoked at the end of every `checkpoint_every`-th epoch.
    int checkpoint_every = 0;
    std::function<void(const Checkpoint&)> on_checkpoint;
    // Continue from a checkpoint written by an earlier run.
    std::optional<Checkpoint> resume;
};

struct TrainResult {
    UNetParams<float> params;  // best iterate
    Checkpoint last;           // state after the final epoch
    std::vector<double> epoch_mean_loss;
    SolveReport report;
};

TrainResult train_unet(const std::vector<TrainingSample>& dataset, const UNetConfig& config,
                       const LossWeights& weights, const TrainOptions& opts);

// Loss of params on one sample (the same objective train_unet minimises).
LossTerms evaluate_unet_loss(const UNetParams<float>& params, const TrainingSample& sample,
                             const LossWeights& weights);

struct Inference {
    DisplacementField u;
    VolumeGrid v_def;  // HU
};

Inference infer_unet(const UNetParams<float>& params, const VolumeGrid& v_s, const Image2D& i_s,
                     const Image2D& i_t);

// ---------------------------------------------------------------------------
// Rigid 2D/3D baseline.

// Translation in voxels; rotations in degrees about the volume centre,
// applied x first, then y, then z.
struct RigidParams {
    double tx = 0.0, ty = 0.0, tz = 0.0;
    double rx = 0.0, ry = 0.0, rz = 0.0;

    std::array<double, 6> as_array() const { return {tx, ty, tz, rx, ry, rz}; }
    static RigidParams from_array(const std::array<double, 6>& a) { return {a[0], a[1], a[2], a[3], a[4], a[5]}; }
    // Folds every angle into (-180, 180].
    RigidParams wrapped() const;
};

// Output(p) = v(R^T (p - c - t) + c): the content of v moved by the rigid
// map q -> R (q - c) + c + t. Trilinear, clamp-to-edge.
VolumeGrid apply_rigid(const VolumeGrid& v, const RigidParams& theta);

// The same map as a pull-back displacement field, u(p) = R^T (p - c - t) + c - p.
DisplacementField rigid_field(const Dims3& dims, const RigidParams& theta);

double normalized_cross_correlation(const Image2D& a, const Image2D& b);

struct RigidOptions {
    int restarts = 3;
    int max_evaluations = 600;  // per restart
    double translation_step = 2.0;
    double rotation_step = 3.0;
    double tolerance = 1e-7;
    std::uint64_t seed = 0;
};

struct RigidResult {
    RigidParams params;
    VolumeGrid v_def;
    double ncc = 0.0;
    SolveReport report;
};

// Nelder-Mead maximising NCC between the DRR of the moved source and i_t,
// with seeded restarts. ty is not observable in the DRR and stays at 0.
RigidResult register_rigid(const VolumeGrid& v_s, const Image2D& i_t, const RigidOptions& opts);

// Minimises f over R^n from x0 with an axis-aligned initial simplex.
struct NelderMeadResult {
    std::vector<double> x;
    double value = 0.0;
    int evaluations = 0;
    int iterations = 0;
};

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x0,
                             const std::vector<double>& steps, int max_evaluations, double tolerance,
                             const std::function<void(int, double)>& on_iteration = {});

// ---------------------------------------------------------------------------
// 2D-DF baseline.

struct Register2dOptions {
    int steps = 300;
    double lr = 0.1;
    std::uint64_t seed = 0;
};

struct Register2dResult {
    Dvf2D u;
    Image2D warped;
    SolveReport report;
};

// Minimises MSE(warp2d(i_s, u), i_t) + lambda * smooth2d(u).
Register2dResult register_2d(const Image2D& i_s, const Image2D& i_t, const LossWeights& weights,
                             const Register2dOptions& opts);

// Lifts an in-plane field to 3D: (ux, 0, uz) repeated over every coronal slice.
DisplacementField field_from_2ddf(const Dvf2D& u2d, const Dims3& dims);

// Warps every coronal slice of v_s by the same in-plane field.
VolumeGrid apply_2ddf_to_volume(const VolumeGrid& v_s, const Dvf2D& u2d);

// ---------------------------------------------------------------------------
// Phantom registration cases (source at phase 0, target at `phase`).

struct PhantomCase {
    std::string id;
    int phase = 50;
    double amplitude_scale = 1.0;
    VolumeGrid source;
    LabelVolume source_labels;
    Image2D source_drr;
    VolumeGrid target;
    LabelVolume target_labels;
    Image2D target_drr;
    DisplacementField u_gt;
};

PhantomCase make_phantom_case(const PhantomReference& ref, const RespiratoryModel& model, int phase,
                              const std::string& id);

// `count` cases whose amplitudes are the base model's scaled by a seeded
// factor drawn uniformly from [scale_lo, scale_hi].
std::vector<PhantomCase> make_phantom_cases(const PhantomSpec& spec, const RespiratoryModel& base, int count,
                                            std::uint64_t seed, double scale_lo, double scale_hi, int phase = 50);

TrainingSample to_training_sample(const PhantomCase& c, bool with_u_gt);

} // namespace deformreg
