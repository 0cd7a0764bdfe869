#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cgm/codec.hpp"
#include "cgm/table.hpp"
#include "cgm/transformer.hpp"

namespace cgm {

// Hyperparameters; the defaults are the reference configuration.
struct TrainConfig {
    int hidden = 64;
    int n_blocks = 2;
    int n_heads = 8;
    int epochs = 15;
    int batch = 128;
    double lr = 0.001;
    double beta1 = 0.5;
    double beta2 = 0.99;
    std::uint64_t seed = 0;
    bool prefix_subsample = true;
    double subsample_p = 0.2;
    int bins = kDefaultBins;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// All learned state: per-feature codecs (owning the tied embeddings E_k),
// column embeddings x_k, the start row, the causal transformer stack, and the
// output cross-attention head.
struct ModelParams {
    int hidden = 0;
    std::vector<FeatureSchema> schemas;
    std::vector<std::unique_ptr<FeatureCodec>> codecs;
    std::vector<Tensor> column_embeddings;  // per feature, [1 x hidden]
    Tensor start_row;                       // [1 x hidden]
    TransformerStack stack;
    CrossAttentionHead head;

    int feature_count() const { return static_cast<int>(schemas.size()); }
    int feature_index(const std::string& name) const;  // -1 when absent
    std::vector<std::pair<std::string, Tensor>> named_params() const;
    std::vector<Tensor> param_tensors() const;
};

ModelParams init_model(std::vector<FeatureSchema> schemas, const TrainConfig& config);

struct ForwardResult {
    Tensor y;     // [present_features x hidden], permuted order
    Tensor loss;  // scalar, sum of per-feature losses
};

// One example through the model: encode + column embeddings, causal
// transformer over the input features, output representations for all present
// features under the strict-prefix mask, cross-entropy per feature.
ForwardResult forward_example(const ModelParams& params, const PermutedExample& example);

// Mean example loss over the batch.
Tensor forward_batch_loss(const ModelParams& params, const std::vector<PermutedExample>& batch);

struct TrainResult {
    std::vector<double> epoch_loss;     // mean per-row loss per epoch
    std::size_t skipped_examples = 0;   // rows with no present feature
};

TrainResult train(ModelParams& params, const TableDataset& data, const TrainConfig& config);

// P(target | prefix) with the prefix given as (feature, class) pairs in
// sequence order.
std::vector<double> conditional_distribution(const ModelParams& params,
                                             const std::vector<std::pair<int, int>>& prefix,
                                             int target_feature, double temperature = 1.0);

struct GenerateOptions {
    double temperature = 1.0;
    bool fixed_order = false;  // schema order instead of a per-row random order
    int n_threads = 1;
};

TableDataset generate(const ModelParams& params, std::size_t count, std::uint64_t seed,
                      const GenerateOptions& options = {});

// Fixed features lead the sequence; the rest are generated conditionally and
// the fixed columns are echoed verbatim. `fixed` aligns with the schemas.
TableDataset conditional_generate(const ModelParams& params,
                                  const std::vector<std::optional<Value>>& fixed, std::size_t count,
                                  std::uint64_t seed, const GenerateOptions& options = {});

// Chain-rule log-likelihood of a complete row under the given feature order.
// `classes[f]` is feature f's class index; every feature in `order` must be
// present (>= 0).
double log_likelihood(const ModelParams& params, const std::vector<std::int32_t>& classes,
                      const std::vector<int>& order);

// Class indices for one dataset row (-1 where missing).
std::vector<std::int32_t> encode_row(const ModelParams& params, const TableDataset& ds, std::size_t row);

// DataError with a column-by-column diff when the dataset does not match.
void require_schema_match(const std::vector<FeatureSchema>& schemas, const TableDataset& ds);

// ---------------------------------------------------------------------------
// Checkpoints: versioned container of named tensors + schemas + config.
// Little-endian 64-bit floats; load -> save is byte-identical.
// ---------------------------------------------------------------------------

struct Checkpoint {
    ModelParams params;
    TrainConfig config;
};

void save_checkpoint(const ModelParams& params, const TrainConfig& config, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cgm
