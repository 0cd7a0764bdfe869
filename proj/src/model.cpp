#include "cgm/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include "cgm/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace cgm {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (hidden < 1 || n_heads < 1 || hidden % n_heads != 0) {
        throw ContractError("config: hidden must be a positive multiple of n_heads");
    }
    if (n_blocks < 0 || epochs < 0 || batch < 1 || bins < 1) {
        throw ContractError("config: non-positive size parameter");
    }
    if (!(lr > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ContractError("config: invalid optimizer parameters");
    }
    if (subsample_p < 0.0 || subsample_p >= 1.0) {
        throw ContractError("config: subsample_p must be in [0, 1)");
    }
}

nlohmann::json TrainConfig::to_json() const {
    return nlohmann::json{
        {"hidden", hidden},   {"n_blocks", n_blocks},
        {"n_heads", n_heads}, {"epochs", epochs},
        {"batch", batch},     {"lr", lr},
        {"beta1", beta1},     {"beta2", beta2},
        {"seed", seed},       {"prefix_subsample", prefix_subsample},
        {"subsample_p", subsample_p}, {"bins", bins},
    };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.hidden = j.at("hidden").get<int>();
    c.n_blocks = j.at("n_blocks").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.batch = j.at("batch").get<int>();
    c.lr = j.at("lr").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.prefix_subsample = j.at("prefix_subsample").get<bool>();
    c.subsample_p = j.at("subsample_p").get<double>();
    c.bins = j.at("bins").get<int>();
    return c;
}

// ---------------------------------------------------------------------------
// Params
// ---------------------------------------------------------------------------

int ModelParams::feature_index(const std::string& name) const {
    for (std::size_t i = 0; i < schemas.size(); ++i) {
        if (schemas[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("start_row", start_row);
    for (std::size_t f = 0; f < schemas.size(); ++f) {
        out.emplace_back("embedding." + schemas[f].name, codecs[f]->embedding());
        out.emplace_back("column_embedding." + schemas[f].name, column_embeddings[f]);
    }
    stack.collect(out);
    head.collect(out);
    return out;
}

std::vector<Tensor> ModelParams::param_tensors() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
}

ModelParams init_model(std::vector<FeatureSchema> schemas, const TrainConfig& config) {
    config.validate();
    if (schemas.empty()) throw ContractError("init_model: no features");
    std::mt19937_64 rng = rng_stream(config.seed, {kStreamInit});
    ModelParams p;
    p.hidden = config.hidden;
    p.schemas = std::move(schemas);
    for (const FeatureSchema& s : p.schemas) {
        p.codecs.push_back(make_codec(s, config.hidden, rng));
        p.column_embeddings.push_back(Tensor::randn({1, config.hidden}, rng, kWeightInitStd, true));
    }
    p.start_row = Tensor::randn({1, config.hidden}, rng, kWeightInitStd, true);
    p.stack = TransformerStack::init(config.hidden, config.n_blocks, config.n_heads, rng);
    p.head = CrossAttentionHead::init(config.hidden, config.n_heads, rng);
    return p;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

ForwardResult forward_example(const ModelParams& params, const PermutedExample& example) {
    const std::size_t n = example.features.size();
    if (n == 0) throw ContractError("forward: example has no present features");

    std::vector<Tensor> h_rows;
    h_rows.reserve(example.input_len);
    for (std::size_t i = 0; i < n; ++i) {
        if (!example.is_input[i]) continue;
        const int f = example.features[i];
        Tensor enc = params.codecs[f]->encode_class(example.targets[i]);
        h_rows.push_back(add(enc, params.column_embeddings[f]));
    }

    Tensor r_aug;
    if (h_rows.empty()) {
        r_aug = params.start_row;
    } else {
        Tensor r = causal_transformer(concat_rows(h_rows), params.stack);
        r_aug = concat_rows({params.start_row, r});
    }

    // Query for position i sees the start row plus R rows of strictly earlier
    // input features.
    std::vector<Tensor> q_rows;
    q_rows.reserve(n);
    std::vector<int> prefix_len(n);
    int inputs_seen = 0;
    for (std::size_t i = 0; i < n; ++i) {
        prefix_len[i] = inputs_seen;
        if (example.is_input[i]) ++inputs_seen;
        q_rows.push_back(params.column_embeddings[example.features[i]]);
    }

    Tensor y = cross_attention_head(concat_rows(q_rows), r_aug, params.head, prefix_len);

    Tensor loss;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor li = params.codecs[example.features[i]]->class_loss(slice_rows(y, static_cast<int>(i), 1),
                                                                   example.targets[i]);
        loss = loss.defined() ? add(loss, li) : li;
    }
    return {y, loss};
}

Tensor forward_batch_loss(const ModelParams& params, const std::vector<PermutedExample>& batch) {
    if (batch.empty()) throw ContractError("forward: empty batch");
    Tensor total;
    for (const PermutedExample& ex : batch) {
        Tensor l = forward_example(params, ex).loss;
        total = total.defined() ? add(total, l) : l;
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainResult train(ModelParams& params, const TableDataset& data, const TrainConfig& config) {
    config.validate();
    require_schema_match(params.schemas, data);

    std::vector<const FeatureCodec*> codecs;
    for (auto& c : params.codecs) codecs.push_back(c.get());
    const EncodedTable encoded = encode_table(data, codecs);

    TrainResult result;
    for (std::size_t r = 0; r < encoded.row_count; ++r) {
        bool any = false;
        for (std::size_t c = 0; c < encoded.column_count; ++c) {
            any = any || encoded.classes[c][r] >= 0;
        }
        if (!any) ++result.skipped_examples;
    }
    if (result.skipped_examples > 0) {
        std::cerr << "warning: " << result.skipped_examples
                  << " row(s) have no present feature and are skipped\n";
    }

    std::vector<Tensor> tensors = params.param_tensors();
    AdamState adam;
    const double subsample = config.prefix_subsample ? config.subsample_p : 0.0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t example_count = 0;
        for (const auto& batch : batches(encoded, static_cast<std::size_t>(config.batch), config.seed,
                                         static_cast<std::uint64_t>(epoch), subsample)) {
            Tape tape;
            Tensor loss = forward_batch_loss(params, batch);
            const double lv = loss.value();
            if (!std::isfinite(lv)) {
                std::ostringstream os;
                os << "train: non-finite loss at epoch " << epoch << " after " << example_count
                   << " examples (lr=" << config.lr << "); lower the learning rate or check the data";
                throw NumericError(os.str());
            }
            tape.backward(loss);
            adam_step(tensors, adam, config.lr, config.beta1, config.beta2);
            for (Tensor& t : tensors) t.zero_grad();
            loss_sum += lv * static_cast<double>(batch.size());
            example_count += batch.size();
        }
        result.epoch_loss.push_back(example_count ? loss_sum / static_cast<double>(example_count) : 0.0);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Probability queries and generation
// ---------------------------------------------------------------------------

namespace {

Tensor output_representation(const ModelParams& params, const std::vector<std::pair<int, int>>& prefix,
                             int target_feature) {
    Tensor r_aug;
    if (prefix.empty()) {
        r_aug = params.start_row;
    } else {
        std::vector<Tensor> h_rows;
        h_rows.reserve(prefix.size());
        for (const auto& [f, cls] : prefix) {
            h_rows.push_back(add(params.codecs[f]->encode_class(cls), params.column_embeddings[f]));
        }
        Tensor r = causal_transformer(concat_rows(h_rows), params.stack);
        r_aug = concat_rows({params.start_row, r});
    }
    const std::vector<int> prefix_len = {static_cast<int>(prefix.size())};
    return cross_attention_head(params.column_embeddings[target_feature], r_aug, params.head, prefix_len);
}

}  // namespace

std::vector<double> conditional_distribution(const ModelParams& params,
                                             const std::vector<std::pair<int, int>>& prefix,
                                             int target_feature, double temperature) {
    if (target_feature < 0 || target_feature >= params.feature_count()) {
        throw ContractError("conditional_distribution: bad feature index");
    }
    Tensor y = output_representation(params, prefix, target_feature);
    Tensor logits = params.codecs[target_feature]->conditional_logits(y);
    const int d = logits.cols();
    const double* pl = logits.data();
    double m = pl[0] / temperature;
    for (int i = 1; i < d; ++i) m = std::max(m, pl[i] / temperature);
    std::vector<double> probs(d);
    double sum = 0.0;
    for (int i = 0; i < d; ++i) {
        probs[i] = std::exp(pl[i] / temperature - m);
        sum += probs[i];
    }
    for (double& p : probs) p /= sum;
    return probs;
}

namespace {

// One generated row; deterministic in (seed, row_index) regardless of the
// worker that runs it.
void generate_row(const ModelParams& params, std::size_t row_index, std::uint64_t seed,
                  const GenerateOptions& options, const std::vector<std::optional<int>>& fixed_classes,
                  std::vector<std::optional<Value>>& out_row) {
    const int n = params.feature_count();

    std::vector<std::pair<int, int>> prefix;
    std::vector<int> open;
    for (int f = 0; f < n; ++f) {
        if (fixed_classes[f]) {
            prefix.emplace_back(f, *fixed_classes[f]);
        } else {
            open.push_back(f);
        }
    }
    if (!options.fixed_order) {
        std::mt19937_64 order_rng = rng_stream(seed, {kStreamOrder, row_index});
        std::shuffle(open.begin(), open.end(), order_rng);
    }

    for (int f : open) {
        std::mt19937_64 rng = rng_stream(seed, {kStreamSample, row_index, static_cast<std::uint64_t>(f)});
        const std::vector<double> probs =
            conditional_distribution(params, prefix, f, options.temperature);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        double u = unif(rng);
        int cls = static_cast<int>(probs.size()) - 1;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            u -= probs[i];
            if (u <= 0.0) {
                cls = static_cast<int>(i);
                break;
            }
        }
        out_row[f] = params.codecs[f]->value_of(cls, rng, false);
        prefix.emplace_back(f, cls);
    }
}

TableDataset rows_to_table(const ModelParams& params,
                           const std::vector<std::vector<std::optional<Value>>>& rows) {
    TableDataset ds;
    for (const FeatureSchema& s : params.schemas) {
        Column col;
        col.name = s.name;
        col.kind = s.kind;
        ds.columns.push_back(std::move(col));
    }
    for (const auto& row : rows) ds.append_row(row);
    return ds;
}

TableDataset generate_impl(const ModelParams& params, const std::vector<std::optional<Value>>& fixed,
                           std::size_t count, std::uint64_t seed, const GenerateOptions& options) {
    const int n = params.feature_count();
    if (static_cast<int>(fixed.size()) != n) {
        throw ContractError("generate: fixed-value vector must align with the schema");
    }
    std::vector<std::optional<int>> fixed_classes(n);
    for (int f = 0; f < n; ++f) {
        if (fixed[f]) fixed_classes[f] = params.codecs[f]->class_of(*fixed[f]);
    }

    std::vector<std::vector<std::optional<Value>>> rows(
        count, std::vector<std::optional<Value>>(static_cast<std::size_t>(n)));
    for (std::size_t r = 0; r < count; ++r) {
        for (int f = 0; f < n; ++f) {
            if (fixed[f]) rows[r][f] = fixed[f];  // echoed verbatim
        }
    }

    const int threads = std::max(1, std::min<int>(options.n_threads,
                                                  static_cast<int>(std::thread::hardware_concurrency())));
    if (threads <= 1 || count < 2) {
        for (std::size_t r = 0; r < count; ++r) {
            generate_row(params, r, seed, options, fixed_classes, rows[r]);
        }
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(threads);
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&, t]() {
                try {
                    for (std::size_t r = t; r < count; r += threads) {
                        generate_row(params, r, seed, options, fixed_classes, rows[r]);
                    }
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
    return rows_to_table(params, rows);
}

}  // namespace

TableDataset generate(const ModelParams& params, std::size_t count, std::uint64_t seed,
                      const GenerateOptions& options) {
    return generate_impl(params, std::vector<std::optional<Value>>(params.feature_count()), count, seed,
                         options);
}

TableDataset conditional_generate(const ModelParams& params,
                                  const std::vector<std::optional<Value>>& fixed, std::size_t count,
                                  std::uint64_t seed, const GenerateOptions& options) {
    return generate_impl(params, fixed, count, seed, options);
}

double log_likelihood(const ModelParams& params, const std::vector<std::int32_t>& classes,
                      const std::vector<int>& order) {
    if (classes.size() != static_cast<std::size_t>(params.feature_count())) {
        throw ContractError("log_likelihood: class vector must align with the schema");
    }
    PermutedExample ex;
    ex.features = order;
    for (int f : order) {
        if (f < 0 || f >= params.feature_count()) throw ContractError("log_likelihood: bad feature in order");
        if (classes[f] < 0) {
            throw ContractError("log_likelihood: missing feature '" + params.schemas[f].name + "'");
        }
        ex.targets.push_back(classes[f]);
    }
    ex.is_input.assign(order.size(), 1);
    ex.input_len = static_cast<int>(order.size());
    return -forward_example(params, ex).loss.value();
}

std::vector<std::int32_t> encode_row(const ModelParams& params, const TableDataset& ds, std::size_t row) {
    std::vector<std::int32_t> classes(params.feature_count(), -1);
    for (int f = 0; f < params.feature_count(); ++f) {
        const int c = ds.column_index(params.schemas[f].name);
        if (c < 0) throw DataError("encode_row: dataset lacks column '" + params.schemas[f].name + "'");
        if (ds.columns[c].present[row]) {
            classes[f] = params.codecs[f]->class_of(ds.columns[c].value(row));
        }
    }
    return classes;
}

void require_schema_match(const std::vector<FeatureSchema>& schemas, const TableDataset& ds) {
    std::vector<std::string> problems;
    for (const FeatureSchema& s : schemas) {
        const int c = ds.column_index(s.name);
        if (c < 0) {
            problems.push_back("missing column '" + s.name + "'");
        } else if (ds.columns[c].kind != s.kind) {
            problems.push_back("column '" + s.name + "' kind mismatch");
        }
    }
    for (const Column& col : ds.columns) {
        bool known = false;
        for (const FeatureSchema& s : schemas) known = known || s.name == col.name;
        if (!known) problems.push_back("unexpected column '" + col.name + "'");
    }
    if (!problems.empty()) {
        std::string msg = "schema mismatch:";
        for (const std::string& p : problems) msg += " " + p + ";";
        throw DataError(msg);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'G', 'M', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const ModelParams& params, const TrainConfig& config, const std::string& path) {
    const auto named = params.named_params();
    nlohmann::json header;
    header["version"] = kVersion;
    header["hidden"] = params.hidden;
    header["config"] = config.to_json();
    header["schemas"] = nlohmann::json::array();
    for (const FeatureSchema& s : params.schemas) header["schemas"].push_back(s.to_json());
    header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : named) {
        header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
    }
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t len = header_str.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, t] : named) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");

    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError("'" + path + "' is not a CGM checkpoint");
    }
    std::uint32_t version = 0;
    if (!in.read(reinterpret_cast<char*>(&version), sizeof(version))) {
        throw DataError("checkpoint truncated: missing version");
    }
    if (version != kVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    std::uint64_t len = 0;
    if (!in.read(reinterpret_cast<char*>(&len), sizeof(len))) {
        throw DataError("checkpoint truncated: missing header");
    }
    std::string header_str(len, '\0');
    if (!in.read(header_str.data(), static_cast<std::streamsize>(len))) {
        throw DataError("checkpoint truncated: incomplete header");
    }

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    Checkpoint ck;
    ck.config = TrainConfig::from_json(header.at("config"));
    std::vector<FeatureSchema> schemas;
    for (const auto& js : header.at("schemas")) schemas.push_back(FeatureSchema::from_json(js));
    ck.params = init_model(std::move(schemas), ck.config);

    const auto named = ck.params.named_params();
    const auto& manifest = header.at("tensors");
    if (manifest.size() != named.size()) {
        throw DataError("checkpoint tensor manifest does not match the model layout");
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
        const std::string name = manifest[i].at("name").get<std::string>();
        const Shape shape = manifest[i].at("shape").get<Shape>();
        if (name != named[i].first || shape != named[i].second.shape()) {
            throw DataError("checkpoint tensor mismatch at '" + name + "': expected '" + named[i].first +
                            "' with shape " + shape_str(named[i].second.shape()));
        }
        Tensor t = named[i].second;
        if (!in.read(reinterpret_cast<char*>(t.data()),
                     static_cast<std::streamsize>(t.size() * sizeof(double)))) {
            throw DataError("checkpoint truncated: tensor '" + name + "' incomplete");
        }
    }
    char extra;
    if (in.read(&extra, 1)) throw DataError("checkpoint has trailing bytes");
    return ck;
}

}  // namespace cgm
