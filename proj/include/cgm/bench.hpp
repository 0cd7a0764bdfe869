#pragma once

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cgm/model.hpp"
#include "cgm/table.hpp"

namespace cgm {

// ---------------------------------------------------------------------------
// Parametric data models (the ground truth M of the scoring protocol)
// ---------------------------------------------------------------------------

struct RefitInfo {
    bool converged = true;
    bool degenerate = false;
    std::string note;
};

class ParametricModel {
  public:
    virtual ~ParametricModel() = default;
    virtual std::string name() const = 0;
    virtual TableDataset sample(std::size_t n, std::mt19937_64& rng) const = 0;
    virtual double log_prob(const TableDataset& ds, std::size_t row) const = 0;
    // Maximum-likelihood refit within the model's own family.
    virtual std::unique_ptr<ParametricModel> refit(const TableDataset& data, std::uint64_t seed,
                                                   RefitInfo* info) const = 0;
    double mean_log_prob(const TableDataset& ds) const;
};

struct GaussComponent {
    double mean_x = 0.0;
    double mean_y = 0.0;
    double sigma = 1.0;  // isotropic
};

// Mixture of isotropic 2-D Gaussians over columns (x, y).
class GaussianMixture2D : public ParametricModel {
  public:
    GaussianMixture2D(std::string name, std::vector<GaussComponent> components,
                      std::vector<double> weights);

    // 5x5 lattice on [-4,4]^2, sigma 0.12, equal weights.
    static GaussianMixture2D grid();
    // Same lattice with centers jittered by U(-0.3, 0.3) from a fixed stream.
    static GaussianMixture2D gridr();
    // 8 components on a radius-2 circle, sigma 0.1.
    static GaussianMixture2D ring();

    std::string name() const override { return name_; }
    TableDataset sample(std::size_t n, std::mt19937_64& rng) const override;
    double log_prob(const TableDataset& ds, std::size_t row) const override;
    std::unique_ptr<ParametricModel> refit(const TableDataset& data, std::uint64_t seed,
                                           RefitInfo* info) const override;

    double log_prob_point(double x, double y) const;
    const std::vector<GaussComponent>& components() const { return components_; }
    const std::vector<double>& weights() const { return weights_; }

  private:
    std::string name_;
    std::vector<GaussComponent> components_;
    std::vector<double> weights_;
};

constexpr int kEmIterations = 50;
constexpr double kEmVarianceFloor = 1e-4;

struct BayesNode {
    std::string name;
    std::vector<std::string> values;
    std::vector<int> parents;        // indices into the node list
    std::vector<double> cpt;         // [parent configs x cardinality], row-major
};

// Discrete Bayesian network with explicit CPTs; small enough to enumerate.
class DiscreteBayesNet : public ParametricModel {
  public:
    DiscreteBayesNet(std::string name, std::vector<BayesNode> nodes);
    static DiscreteBayesNet from_json(const nlohmann::json& j);
    static DiscreteBayesNet load(const std::string& path);

    std::string name() const override { return name_; }
    TableDataset sample(std::size_t n, std::mt19937_64& rng) const override;
    double log_prob(const TableDataset& ds, std::size_t row) const override;
    std::unique_ptr<ParametricModel> refit(const TableDataset& data, std::uint64_t seed,
                                           RefitInfo* info) const override;

    double log_prob_assignment(const std::vector<int>& values) const;
    std::size_t state_count() const;
    std::vector<int> state_at(std::size_t index) const;
    double entropy() const;  // exact, nats
    const std::vector<BayesNode>& nodes() const { return nodes_; }

  private:
    std::vector<int> row_values(const TableDataset& ds, std::size_t row) const;
    std::string name_;
    std::vector<BayesNode> nodes_;
    std::vector<int> topo_order_;
};

constexpr double kCptSmoothing = 1.0;  // add-one

// ---------------------------------------------------------------------------
// Synthesizers
// ---------------------------------------------------------------------------

class Synthesizer {
  public:
    virtual ~Synthesizer() = default;
    virtual std::string name() const = 0;
    virtual void fit(const TableDataset& train, std::uint64_t seed) = 0;
    virtual TableDataset generate(std::size_t n, std::uint64_t seed) = 0;
};

// uniform | independent | identity | cgm | constant
std::unique_ptr<Synthesizer> make_synthesizer(const std::string& name, const TrainConfig& cgm_config);

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

struct SimulatedScores {
    double l_syn = 0.0;
    double l_test = 0.0;
    bool refit_converged = true;
    bool refit_degenerate = false;
};

// T_train, T_test ~ M; synthesizer trained on T_train; T_syn of size n_train;
// L_syn = mean log P(T_syn | M); L_test = mean log P(T_test | refit(M, T_syn)).
SimulatedScores eval_simulated(const ParametricModel& model, Synthesizer& synth, std::size_t n_train,
                               std::size_t n_test, std::uint64_t seed);

struct EfficacyScores {
    double accuracy = 0.0;
    double f1 = 0.0;
    double accuracy_identity = 0.0;
    double f1_identity = 0.0;
    bool class_missing_from_syn = false;
};

EfficacyScores eval_ml_efficacy(const TableDataset& real_train, const TableDataset& real_test,
                                Synthesizer& synth, const std::string& target_column,
                                std::uint64_t seed, bool interactions = false);

// ---------------------------------------------------------------------------
// In-repo classifier: multinomial logistic regression on one-hot features
// ---------------------------------------------------------------------------

class TabularFeaturizer {
  public:
    TabularFeaturizer(const TableDataset& train, const std::string& target, bool interactions,
                      int bins = kDefaultBins);
    std::size_t dim() const { return dim_; }
    int n_classes() const { return static_cast<int>(target_categories_.size()); }
    const std::vector<std::string>& target_categories() const { return target_categories_; }
    std::vector<double> encode(const TableDataset& ds, std::size_t row) const;
    // -1 when the target is missing or unseen.
    int target_class(const TableDataset& ds, std::size_t row) const;

  private:
    int class_of(const TableDataset& ds, std::size_t row, std::size_t featurizer_col) const;
    std::vector<FeatureSchema> feature_schemas_;  // non-target columns
    std::vector<std::string> feature_names_;
    std::vector<int> offsets_;
    std::vector<std::string> target_categories_;
    std::string target_;
    bool interactions_ = false;
    std::vector<int> pair_offsets_;
    std::size_t dim_ = 0;
};

struct LogisticRegressionConfig {
    double l2 = 1e-3;
    int iterations = 200;
    double lr = 0.5;
};

class LogisticRegression {
  public:
    void fit(const std::vector<std::vector<double>>& x, const std::vector<int>& y, int n_classes,
             const LogisticRegressionConfig& config = {});
    int predict(const std::vector<double>& x) const;

  private:
    int n_classes_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> weights_;  // [n_classes x dim]
    std::vector<double> bias_;
};

// ---------------------------------------------------------------------------
// Leaderboard
// ---------------------------------------------------------------------------

struct BenchDatasetSpec {
    std::string name;
    enum class Kind { mixture, bayes_net, csv } kind = Kind::mixture;
    std::string path;    // bayes_net / csv
    std::string target;  // csv
};

struct BenchConfig {
    std::vector<BenchDatasetSpec> datasets;
    std::vector<std::string> synthesizers;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::size_t n_train = 10000;
    std::size_t n_test = 10000;
    double test_fraction = 0.25;  // csv datasets
    int workers = 8;
    TrainConfig cgm;
};

// Throws DataError naming the offending field as a JSON pointer. Relative
// paths resolve against `base_dir`.
BenchConfig parse_bench_config(const nlohmann::json& j, const std::string& base_dir);

struct BenchCell {
    std::string dataset;
    std::string synthesizer;
    std::uint64_t seed = 0;
    std::map<std::string, double> metrics;
    std::vector<std::string> flags;
    double wall_time_s = 0.0;
    bool failed = false;
    std::string error;
};

struct BenchmarkReport {
    nlohmann::json config;
    std::string config_hash;
    std::vector<BenchCell> cells;
    // dataset -> diagnostics (e.g. quantization loss on mixtures)
    std::map<std::string, std::map<std::string, double>> dataset_info;

    nlohmann::json to_json() const;
    std::string render_text(bool ansi) const;
    // mean over seeds of a metric for (dataset, synthesizer); nullopt if absent
    std::optional<double> mean_metric(const std::string& dataset, const std::string& synthesizer,
                                      const std::string& metric) const;
};

BenchmarkReport run_leaderboard(const BenchConfig& config);

// Structural validation mirroring data/report.schema.json.
void validate_report_json(const nlohmann::json& report);

std::string fnv1a_hash(const std::string& text);

}  // namespace cgm
