#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "cgm/bench.hpp"
#include "cgm/rng.hpp"

namespace cgm {

namespace {
constexpr double kTwoPi = 6.283185307179586477;

double logsumexp(const std::vector<double>& xs) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : xs) m = std::max(m, x);
    if (std::isinf(m)) return m;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}
}  // namespace

double ParametricModel::mean_log_prob(const TableDataset& ds) const {
    if (ds.row_count == 0) throw ContractError("mean_log_prob: empty table");
    double sum = 0.0;
    for (std::size_t r = 0; r < ds.row_count; ++r) sum += log_prob(ds, r);
    return sum / static_cast<double>(ds.row_count);
}

// ---------------------------------------------------------------------------
// GaussianMixture2D
// ---------------------------------------------------------------------------

GaussianMixture2D::GaussianMixture2D(std::string name, std::vector<GaussComponent> components,
                                     std::vector<double> weights)
    : name_(std::move(name)), components_(std::move(components)), weights_(std::move(weights)) {
    if (components_.empty() || components_.size() != weights_.size()) {
        throw ContractError("mixture: component/weight count mismatch");
    }
    double sum = 0.0;
    for (double w : weights_) {
        if (w < 0.0) throw ContractError("mixture: negative weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ContractError("mixture: weights must sum to 1");
    for (const GaussComponent& c : components_) {
        if (!(c.sigma > 0.0)) throw ContractError("mixture: sigma must be positive");
    }
}

GaussianMixture2D GaussianMixture2D::grid() {
    std::vector<GaussComponent> comps;
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            comps.push_back({-4.0 + 2.0 * i, -4.0 + 2.0 * j, 0.12});
        }
    }
    return GaussianMixture2D("grid", comps, std::vector<double>(25, 1.0 / 25.0));
}

GaussianMixture2D GaussianMixture2D::gridr() {
    GaussianMixture2D base = grid();
    std::mt19937_64 rng = rng_stream(7, {kStreamBench, 0x67726964});  // fixed jitter stream
    std::uniform_real_distribution<double> jitter(-0.3, 0.3);
    std::vector<GaussComponent> comps = base.components_;
    for (GaussComponent& c : comps) {
        c.mean_x += jitter(rng);
        c.mean_y += jitter(rng);
    }
    return GaussianMixture2D("gridr", comps, base.weights_);
}

GaussianMixture2D GaussianMixture2D::ring() {
    std::vector<GaussComponent> comps;
    for (int i = 0; i < 8; ++i) {
        const double angle = kTwoPi * i / 8.0;
        comps.push_back({2.0 * std::cos(angle), 2.0 * std::sin(angle), 0.1});
    }
    return GaussianMixture2D("ring", comps, std::vector<double>(8, 1.0 / 8.0));
}

TableDataset GaussianMixture2D::sample(std::size_t n, std::mt19937_64& rng) const {
    TableDataset ds;
    Column x, y;
    x.name = "x";
    y.name = "y";
    x.kind = y.kind = ColumnKind::numerical;
    std::discrete_distribution<int> pick(weights_.begin(), weights_.end());
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const GaussComponent& c = components_[pick(rng)];
        x.nums.push_back(c.mean_x + c.sigma * gauss(rng));
        y.nums.push_back(c.mean_y + c.sigma * gauss(rng));
        x.present.push_back(1);
        y.present.push_back(1);
    }
    ds.columns = {std::move(x), std::move(y)};
    ds.row_count = n;
    return ds;
}

double GaussianMixture2D::log_prob_point(double px, double py) const {
    std::vector<double> terms(components_.size());
    for (std::size_t i = 0; i < components_.size(); ++i) {
        const GaussComponent& c = components_[i];
        const double dx = px - c.mean_x;
        const double dy = py - c.mean_y;
        const double var = c.sigma * c.sigma;
        terms[i] = std::log(weights_[i]) - std::log(kTwoPi * var) - (dx * dx + dy * dy) / (2.0 * var);
    }
    return logsumexp(terms);
}

double GaussianMixture2D::log_prob(const TableDataset& ds, std::size_t row) const {
    const int xc = ds.column_index("x");
    const int yc = ds.column_index("y");
    if (xc < 0 || yc < 0) throw DataError("mixture log_prob: table lacks x/y columns");
    return log_prob_point(ds.columns[xc].nums[row], ds.columns[yc].nums[row]);
}

namespace {

// Seeded k-means++ center selection over (x, y) points.
std::vector<std::size_t> kmeanspp_centers(const std::vector<double>& xs, const std::vector<double>& ys,
                                          std::size_t k, std::mt19937_64& rng) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> centers;
    std::uniform_int_distribution<std::size_t> uni(0, n - 1);
    centers.push_back(uni(rng));
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    while (centers.size() < k) {
        const std::size_t last = centers.back();
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dx = xs[i] - xs[last];
            const double dy = ys[i] - ys[last];
            d2[i] = std::min(d2[i], dx * dx + dy * dy);
            total += d2[i];
        }
        if (total <= 0.0) {
            centers.push_back(uni(rng));  // collapsed data: any point will do
            continue;
        }
        std::uniform_real_distribution<double> unif(0.0, total);
        double u = unif(rng);
        std::size_t chosen = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            u -= d2[i];
            if (u <= 0.0) {
                chosen = i;
                break;
            }
        }
        centers.push_back(chosen);
    }
    return centers;
}

}  // namespace

std::unique_ptr<ParametricModel> GaussianMixture2D::refit(const TableDataset& data, std::uint64_t seed,
                                                          RefitInfo* info) const {
    const int xc = data.column_index("x");
    const int yc = data.column_index("y");
    if (xc < 0 || yc < 0) throw DataError("mixture refit: table lacks x/y columns");
    const std::vector<double>& xs = data.columns[xc].nums;
    const std::vector<double>& ys = data.columns[yc].nums;
    const std::size_t n = data.row_count;
    const std::size_t k = components_.size();
    if (n < k) throw DataError("mixture refit: fewer points than components");

    RefitInfo local;
    std::mt19937_64 rng = rng_stream(seed, {kStreamBench, 0x656d});
    const std::vector<std::size_t> centers = kmeanspp_centers(xs, ys, k, rng);

    std::vector<double> mx(k), my(k), var(k, 0.0), w(k, 1.0 / static_cast<double>(k));
    for (std::size_t c = 0; c < k; ++c) {
        mx[c] = xs[centers[c]];
        my[c] = ys[centers[c]];
    }
    // Hard-assignment pass to seed variances and weights.
    {
        std::vector<double> sq(k, 0.0);
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double dx = xs[i] - mx[c];
                const double dy = ys[i] - my[c];
                const double d = dx * dx + dy * dy;
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            sq[best] += bd;
            count[best] += 1;
        }
        for (std::size_t c = 0; c < k; ++c) {
            var[c] = count[c] ? std::max(sq[c] / (2.0 * count[c]), kEmVarianceFloor) : kEmVarianceFloor;
            w[c] = std::max(static_cast<double>(count[c]) / n, 1e-12);
        }
        double wsum = std::accumulate(w.begin(), w.end(), 0.0);
        for (double& v : w) v /= wsum;
    }

    std::vector<double> resp(n * k);
    double prev_ll = -std::numeric_limits<double>::infinity();
    double ll = prev_ll;
    for (int iter = 0; iter < kEmIterations; ++iter) {
        // E step
        ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double dx = xs[i] - mx[c];
                const double dy = ys[i] - my[c];
                const double lp =
                    std::log(w[c]) - std::log(kTwoPi * var[c]) - (dx * dx + dy * dy) / (2.0 * var[c]);
                resp[i * k + c] = lp;
                m = std::max(m, lp);
            }
            double s = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                resp[i * k + c] = std::exp(resp[i * k + c] - m);
                s += resp[i * k + c];
            }
            for (std::size_t c = 0; c < k; ++c) resp[i * k + c] /= s;
            ll += m + std::log(s);
        }
        // M step
        for (std::size_t c = 0; c < k; ++c) {
            double rsum = 0.0, sx = 0.0, sy = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double r = resp[i * k + c];
                rsum += r;
                sx += r * xs[i];
                sy += r * ys[i];
            }
            if (rsum < 1e-12) {
                local.degenerate = true;
                w[c] = 1e-12;
                continue;
            }
            mx[c] = sx / rsum;
            my[c] = sy / rsum;
            double sq = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double dx = xs[i] - mx[c];
                const double dy = ys[i] - my[c];
                sq += resp[i * k + c] * (dx * dx + dy * dy);
            }
            var[c] = sq / (2.0 * rsum);
            if (var[c] < kEmVarianceFloor) {
                var[c] = kEmVarianceFloor;
                local.degenerate = true;
            }
            w[c] = rsum / n;
        }
        double wsum = std::accumulate(w.begin(), w.end(), 0.0);
        for (double& v : w) v /= wsum;
        if (iter > 0 && std::abs(ll - prev_ll) < 1e-9 * (1.0 + std::abs(ll))) {
            prev_ll = ll;
            break;
        }
        prev_ll = ll;
    }
    if (std::abs(ll - prev_ll) > 1e-6 * (1.0 + std::abs(ll))) {
        local.converged = false;
        local.note = "EM still improving after max iterations";
    }

    std::vector<GaussComponent> comps(k);
    for (std::size_t c = 0; c < k; ++c) comps[c] = {mx[c], my[c], std::sqrt(var[c])};
    if (info) *info = local;
    return std::make_unique<GaussianMixture2D>(name_ + "-refit", comps, w);
}

// ---------------------------------------------------------------------------
// DiscreteBayesNet
// ---------------------------------------------------------------------------

DiscreteBayesNet::DiscreteBayesNet(std::string name, std::vector<BayesNode> nodes)
    : name_(std::move(name)), nodes_(std::move(nodes)) {
    const int n = static_cast<int>(nodes_.size());
    for (const BayesNode& node : nodes_) {
        if (node.values.size() < 1) throw DataError("bayes net: node '" + node.name + "' has no values");
        std::size_t configs = 1;
        for (int p : node.parents) {
            if (p < 0 || p >= n) throw DataError("bayes net: bad parent index in '" + node.name + "'");
            configs *= nodes_[p].values.size();
        }
        if (node.cpt.size() != configs * node.values.size()) {
            throw DataError("bayes net: CPT size mismatch in '" + node.name + "'");
        }
        for (std::size_t row = 0; row < configs; ++row) {
            double sum = 0.0;
            for (std::size_t v = 0; v < node.values.size(); ++v) {
                const double p = node.cpt[row * node.values.size() + v];
                if (p < 0.0) throw DataError("bayes net: negative CPT entry in '" + node.name + "'");
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-12) {
                throw DataError("bayes net: CPT row does not sum to 1 in '" + node.name + "'");
            }
        }
    }
    // Kahn's algorithm; rejects cycles.
    std::vector<int> indegree(n, 0);
    std::vector<std::vector<int>> children(n);
    for (int i = 0; i < n; ++i) {
        indegree[i] = static_cast<int>(nodes_[i].parents.size());
        for (int p : nodes_[i].parents) children[p].push_back(i);
    }
    std::vector<int> queue;
    for (int i = 0; i < n; ++i) {
        if (indegree[i] == 0) queue.push_back(i);
    }
    for (std::size_t q = 0; q < queue.size(); ++q) {
        const int u = queue[q];
        topo_order_.push_back(u);
        for (int v : children[u]) {
            if (--indegree[v] == 0) queue.push_back(v);
        }
    }
    if (static_cast<int>(topo_order_.size()) != n) throw DataError("bayes net: graph has a cycle");
}

DiscreteBayesNet DiscreteBayesNet::from_json(const nlohmann::json& j) {
    std::vector<BayesNode> nodes;
    std::map<std::string, int> index;
    for (const auto& jn : j.at("nodes")) {
        index[jn.at("name").get<std::string>()] = static_cast<int>(index.size());
    }
    for (const auto& jn : j.at("nodes")) {
        BayesNode node;
        node.name = jn.at("name").get<std::string>();
        node.values = jn.at("values").get<std::vector<std::string>>();
        for (const auto& p : jn.at("parents")) {
            const std::string pname = p.get<std::string>();
            if (!index.count(pname)) throw DataError("bayes net: unknown parent '" + pname + "'");
            node.parents.push_back(index[pname]);
        }
        node.cpt = jn.at("cpt").get<std::vector<double>>();
        nodes.push_back(std::move(node));
    }
    return DiscreteBayesNet(j.value("name", "bayes_net"), std::move(nodes));
}

DiscreteBayesNet DiscreteBayesNet::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open bayes net '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bayes net '" + path + "': " + e.what());
    }
    return from_json(j);
}

namespace {
std::size_t parent_config_index(const std::vector<BayesNode>& nodes, const BayesNode& node,
                                const std::vector<int>& values) {
    std::size_t idx = 0;
    for (int p : node.parents) {
        idx = idx * nodes[p].values.size() + static_cast<std::size_t>(values[p]);
    }
    return idx;
}
}  // namespace

TableDataset DiscreteBayesNet::sample(std::size_t n, std::mt19937_64& rng) const {
    TableDataset ds;
    for (const BayesNode& node : nodes_) {
        Column col;
        col.name = node.name;
        col.kind = ColumnKind::categorical;
        ds.columns.push_back(std::move(col));
    }
    ds.row_count = n;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<int> values(nodes_.size());
    for (std::size_t r = 0; r < n; ++r) {
        for (int i : topo_order_) {
            const BayesNode& node = nodes_[i];
            const std::size_t cfg = parent_config_index(nodes_, node, values);
            const double* row = node.cpt.data() + cfg * node.values.size();
            double u = unif(rng);
            int v = static_cast<int>(node.values.size()) - 1;
            for (std::size_t c = 0; c < node.values.size(); ++c) {
                u -= row[c];
                if (u <= 0.0) {
                    v = static_cast<int>(c);
                    break;
                }
            }
            values[i] = v;
        }
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            ds.columns[i].cats.push_back(nodes_[i].values[values[i]]);
            ds.columns[i].present.push_back(1);
        }
    }
    return ds;
}

std::vector<int> DiscreteBayesNet::row_values(const TableDataset& ds, std::size_t row) const {
    std::vector<int> values(nodes_.size(), -1);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const int c = ds.column_index(nodes_[i].name);
        if (c < 0) throw DataError("bayes net log_prob: table lacks column '" + nodes_[i].name + "'");
        const std::string& cat = ds.columns[c].cats[row];
        int v = -1;
        for (std::size_t k = 0; k < nodes_[i].values.size(); ++k) {
            if (nodes_[i].values[k] == cat) v = static_cast<int>(k);
        }
        if (v < 0) throw DataError("bayes net: unknown value '" + cat + "' for '" + nodes_[i].name + "'");
        values[i] = v;
    }
    return values;
}

double DiscreteBayesNet::log_prob(const TableDataset& ds, std::size_t row) const {
    return log_prob_assignment(row_values(ds, row));
}

double DiscreteBayesNet::log_prob_assignment(const std::vector<int>& values) const {
    if (values.size() != nodes_.size()) throw ContractError("bayes net: assignment size mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const BayesNode& node = nodes_[i];
        const std::size_t cfg = parent_config_index(nodes_, node, values);
        total += std::log(node.cpt[cfg * node.values.size() + static_cast<std::size_t>(values[i])]);
    }
    return total;
}

std::size_t DiscreteBayesNet::state_count() const {
    std::size_t n = 1;
    for (const BayesNode& node : nodes_) n *= node.values.size();
    return n;
}

std::vector<int> DiscreteBayesNet::state_at(std::size_t index) const {
    std::vector<int> values(nodes_.size());
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        values[i] = static_cast<int>(index % nodes_[i].values.size());
        index /= nodes_[i].values.size();
    }
    return values;
}

double DiscreteBayesNet::entropy() const {
    double h = 0.0;
    const std::size_t states = state_count();
    for (std::size_t s = 0; s < states; ++s) {
        const double lp = log_prob_assignment(state_at(s));
        h -= std::exp(lp) * lp;
    }
    return h;
}

std::unique_ptr<ParametricModel> DiscreteBayesNet::refit(const TableDataset& data, std::uint64_t,
                                                         RefitInfo* info) const {
    std::vector<BayesNode> fitted = nodes_;
    for (BayesNode& node : fitted) {
        std::fill(node.cpt.begin(), node.cpt.end(), 0.0);
    }
    for (std::size_t r = 0; r < data.row_count; ++r) {
        const std::vector<int> values = row_values(data, r);
        for (std::size_t i = 0; i < fitted.size(); ++i) {
            const std::size_t cfg = parent_config_index(nodes_, nodes_[i], values);
            fitted[i].cpt[cfg * fitted[i].values.size() + static_cast<std::size_t>(values[i])] += 1.0;
        }
    }
    for (BayesNode& node : fitted) {
        const std::size_t card = node.values.size();
        for (std::size_t row = 0; row * card < node.cpt.size(); ++row) {
            double sum = 0.0;
            for (std::size_t v = 0; v < card; ++v) {
                node.cpt[row * card + v] += kCptSmoothing;
                sum += node.cpt[row * card + v];
            }
            for (std::size_t v = 0; v < card; ++v) node.cpt[row * card + v] /= sum;
        }
    }
    if (info) *info = RefitInfo{};
    return std::make_unique<DiscreteBayesNet>(name_ + "-refit", std::move(fitted));
}

}  // namespace cgm
