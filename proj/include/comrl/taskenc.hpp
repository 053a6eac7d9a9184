#pragma once

#include <functional>
#include <string>
#include <vector>

#include "comrl/core.hpp"
#include "comrl/diffcompute.hpp"

namespace comrl::taskenc {

enum class LossKind { classifier, focal_metric, reconstruction, classifier_plus_reconstruction };

std::string loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(const std::string& name);

// Encoder architecture and update schedule. update_frequency 1 is the plain
// classifier baseline; 2 halves the encoder update rate.
// Per-row embedding net with an optional tanh bound applied to the pooled
// latent. Bounding after pooling keeps the per-row information intact while
// the downstream critic sees a fixed input box.
struct EncoderModel {
    diffcompute::ApproximatorSpec net;
    bool pooled_tanh = true;
};

struct EncoderConfig {
    int d_z = 5;
    std::vector<int> hidden_widths = {32, 32};
    LossKind loss_kind = LossKind::classifier;
    int update_frequency = 2;
    double focal_beta = 0.5;
    double focal_eps = 1e-3;
    double recon_weight = 1.0;
    std::vector<int> decoder_hidden = {32, 32};
    // tanh-bound the latent to (-1,1)^d_z so the downstream critic sees a
    // stable input box while the classifier margin grows
    bool bound_latent = true;

    void validate() const;
    // Per-transition embedding net over rows (s, a, s', r) -> d_z, plus the
    // pooled-output bound flag.
    EncoderModel encoder_model(int state_dim, int action_dim) const;
    // Decoder (s, a, z) -> (s', r) for the reconstruction loss.
    diffcompute::ApproximatorSpec decoder_spec(int state_dim, int action_dim) const;
    // Single affine layer z -> n_train logits.
    diffcompute::ApproximatorSpec head_spec(int n_train) const;
};

struct TaskEncoder {
    EncoderModel model;
    diffcompute::ParameterVector params;

    core::EncoderSnapshot snapshot(long step_index) const {
        return core::EncoderSnapshot{params.values, step_index};
    }
};

struct ClassifierHead {
    diffcompute::ApproximatorSpec spec;
    diffcompute::ParameterVector params;
};

// Deterministic mean-pooled embedding of the context rows. The pooling uses
// a canonical summation order, so permuting or duplicating rows leaves the
// result bit-identical.
core::LatentZ encode(const EncoderModel& model, const diffcompute::ParameterVector& params,
                     const core::Context& context);

core::LatentZ encode(const EncoderModel& model, const core::EncoderSnapshot& snapshot,
                     const core::Context& context);

// Tape version used inside losses; yields a 1 x d_z node.
diffcompute::Tape::Node encode_node(diffcompute::Tape& tape, const EncoderModel& model,
                                    diffcompute::Tape::Node encoder_params,
                                    const core::Context& context);

// Mean cross-entropy of head(encode(context)) against task labels.
diffcompute::Tape::Node classifier_loss_node(diffcompute::Tape& tape,
                                             const EncoderModel& encoder_model,
                                             diffcompute::Tape::Node encoder_params,
                                             const diffcompute::ApproximatorSpec& head_spec,
                                             diffcompute::Tape::Node head_params,
                                             const std::vector<core::Context>& contexts,
                                             const std::vector<int>& labels);

double classifier_loss(const TaskEncoder& encoder, const ClassifierHead& head,
                       const std::vector<core::Context>& contexts,
                       const std::vector<int>& labels);

// Distance-metric loss: mean squared distance over same-label pairs plus
// beta-weighted mean inverse squared distance over cross-label pairs.
diffcompute::Tape::Node focal_metric_loss_node(diffcompute::Tape& tape,
                                               const EncoderModel& encoder_model,
                                               diffcompute::Tape::Node encoder_params,
                                               const std::vector<core::Context>& contexts,
                                               const std::vector<int>& labels, double beta,
                                               double eps = 1e-3);

double focal_metric_loss(const TaskEncoder& encoder, const std::vector<core::Context>& contexts,
                         const std::vector<int>& labels, double beta, double eps = 1e-3);

// Mean squared error of decoder(s, a, z) against (s', r) over context rows,
// averaged over contexts.
diffcompute::Tape::Node reconstruction_loss_node(diffcompute::Tape& tape,
                                                 const EncoderModel& encoder_model,
                                                 diffcompute::Tape::Node encoder_params,
                                                 const diffcompute::ApproximatorSpec& decoder_spec,
                                                 diffcompute::Tape::Node decoder_params,
                                                 const std::vector<core::Context>& contexts);

double reconstruction_loss(const TaskEncoder& encoder,
                           const diffcompute::ApproximatorSpec& decoder_spec,
                           const diffcompute::ParameterVector& decoder_params,
                           const std::vector<core::Context>& contexts);

// Invokes update_fn iff step % update_frequency == 0; returns whether it ran.
bool gated_update(long step, const EncoderConfig& config,
                  const std::function<void()>& update_fn);

// Mean over probe contexts of the L1 distance between the two snapshots'
// encodings. Zero iff the outputs agree on every probe.
double representation_shift(const EncoderModel& model,
                            const core::EncoderSnapshot& snapshot_prev,
                            const core::EncoderSnapshot& snapshot_curr,
                            const std::vector<core::Context>& probe_contexts);

struct ShiftEntry {
    long step_index = 0;
    double shift_value = 0.0;
    bool encoder_updated = false;
};

// Per-step record of the shift metric; persisted as CSV
// (step_index, shift_value, encoder_updated_flag).
struct ShiftLog {
    std::vector<ShiftEntry> entries;

    void add(long step, double shift, bool updated) {
        entries.push_back(ShiftEntry{step, shift, updated});
    }
    long update_count() const;
    double max_shift() const;
    double mean_update_shift() const;  // mean over entries with encoder_updated
    void write_csv(const std::string& path, const std::string& config_digest) const;
};

}  // namespace comrl::taskenc
