#include "taco/prior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace taco {

void PriorConfig::validate() const {
    if (!n_rows.valid() || n_rows.lo < 8)
        throw ConfigError("prior: n_rows range invalid (need at least 8 rows)");
    if (!n_features.valid() || n_features.lo < 1) throw ConfigError("prior: n_features range invalid");
    if (!num_classes.valid() || num_classes.lo < 2) throw ConfigError("prior: num_classes range invalid");
    if (!latent_confounders.valid() || latent_confounders.lo < 0)
        throw ConfigError("prior: latent_confounders range invalid");
    if (!noise_scale.valid() || noise_scale.lo <= 0.0)
        throw ConfigError("prior: noise_scale range must be positive");
    if (dag_density < 0.0 || dag_density > 1.0) throw ConfigError("prior: dag_density outside [0,1]");
    const double sum = mechanisms.linear + mechanisms.mlp + mechanisms.tree;
    if (mechanisms.linear < 0 || mechanisms.mlp < 0 || mechanisms.tree < 0 ||
        std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("prior: mechanism weights must be nonnegative and sum to 1");
    if (train_fraction <= 0.0 || train_fraction >= 1.0)
        throw ConfigError("prior: train_fraction outside (0,1)");
    if (max_cat_levels < 2 || tree_max_depth < 1 || mlp_hidden < 1 || resample_retries < 1)
        throw ConfigError("prior: structural constants must be positive");
}

bool Dag::is_acyclic() const {
    // Nodes are created in topological order, so acyclicity holds iff every
    // edge points forward.
    for (const auto& [p, c] : edges)
        if (p >= c) return false;
    return true;
}

Dag sample_dag(const PriorConfig& config, Rng& rng) {
    Dag dag;
    const int nf = static_cast<int>(rng.uniform_int(config.n_features.lo, config.n_features.hi));
    const int nl =
        static_cast<int>(rng.uniform_int(config.latent_confounders.lo, config.latent_confounders.hi));
    dag.n_nodes = nf + nl + 1;
    dag.label_node = dag.n_nodes - 1;

    // Latent confounders sit among the non-label nodes at random positions.
    std::vector<int> non_label(static_cast<std::size_t>(dag.n_nodes - 1));
    std::iota(non_label.begin(), non_label.end(), 0);
    for (int i = 0; i < nl; ++i) {
        const auto j = rng.uniform_int(i, dag.n_nodes - 2);
        std::swap(non_label[static_cast<std::size_t>(i)], non_label[static_cast<std::size_t>(j)]);
        dag.latent_nodes.push_back(non_label[static_cast<std::size_t>(i)]);
    }
    std::sort(dag.latent_nodes.begin(), dag.latent_nodes.end());
    for (int v = 0; v < dag.n_nodes - 1; ++v)
        if (!std::binary_search(dag.latent_nodes.begin(), dag.latent_nodes.end(), v))
            dag.feature_nodes.push_back(v);

    dag.parents.assign(static_cast<std::size_t>(dag.n_nodes), {});
    for (int child = 1; child < dag.n_nodes; ++child) {
        for (int parent = 0; parent < child; ++parent) {
            if (rng.uniform() < config.dag_density) {
                dag.edges.emplace_back(parent, child);
                dag.parents[static_cast<std::size_t>(child)].push_back(parent);
            }
        }
    }
    // The label must be caused by something; degenerate draws get one forced
    // parent, chosen uniformly.
    if (dag.parents[static_cast<std::size_t>(dag.label_node)].empty()) {
        const int parent = static_cast<int>(rng.uniform_int(0, dag.label_node - 1));
        dag.edges.emplace_back(parent, dag.label_node);
        dag.parents[static_cast<std::size_t>(dag.label_node)].push_back(parent);
    }
    return dag;
}

namespace {

Mechanism::TreeNode make_leaf(Rng& rng) {
    Mechanism::TreeNode leaf;
    leaf.leaf_value = rng.normal();
    return leaf;
}

int grow_tree(std::vector<Mechanism::TreeNode>& nodes, int depth, int max_depth, int n_parents,
              Rng& rng) {
    const bool split = depth < max_depth && rng.uniform() < 0.7;
    if (!split) {
        nodes.push_back(make_leaf(rng));
        return static_cast<int>(nodes.size()) - 1;
    }
    Mechanism::TreeNode node;
    node.split_parent = static_cast<int>(rng.uniform_int(0, n_parents - 1));
    node.threshold = rng.normal();
    const int self = static_cast<int>(nodes.size());
    nodes.push_back(node);
    nodes[static_cast<std::size_t>(self)].left = grow_tree(nodes, depth + 1, max_depth, n_parents, rng);
    nodes[static_cast<std::size_t>(self)].right = grow_tree(nodes, depth + 1, max_depth, n_parents, rng);
    return self;
}

}  // namespace

double Mechanism::eval(const std::vector<double>& parent_values) const {
    switch (kind) {
        case Kind::root:
            return 0.0;
        case Kind::linear: {
            double out = lin_b;
            for (std::size_t i = 0; i < parent_values.size(); ++i) out += lin_w[i] * parent_values[i];
            return out;
        }
        case Kind::mlp: {
            double out = mlp_b2;
            for (int h = 0; h < mlp_hidden; ++h) {
                double z = mlp_b1[static_cast<std::size_t>(h)];
                for (std::size_t i = 0; i < parent_values.size(); ++i)
                    z += mlp_w1[i * static_cast<std::size_t>(mlp_hidden) + static_cast<std::size_t>(h)] *
                         parent_values[i];
                out += mlp_w2[static_cast<std::size_t>(h)] * std::tanh(z);
            }
            return out;
        }
        case Kind::tree: {
            int node = 0;
            while (tree[static_cast<std::size_t>(node)].split_parent >= 0) {
                const auto& n = tree[static_cast<std::size_t>(node)];
                node = parent_values[static_cast<std::size_t>(n.split_parent)] <= n.threshold ? n.left
                                                                                              : n.right;
            }
            return tree[static_cast<std::size_t>(node)].leaf_value;
        }
    }
    return 0.0;
}

int Mechanism::tree_leaf_count() const {
    int count = 0;
    for (const auto& n : tree) count += n.split_parent < 0 ? 1 : 0;
    return count;
}

std::vector<Mechanism> sample_mechanisms(const Dag& dag, const PriorConfig& config, Rng& rng) {
    std::vector<Mechanism> mechanisms(static_cast<std::size_t>(dag.n_nodes));
    for (int v = 0; v < dag.n_nodes; ++v) {
        Mechanism& mech = mechanisms[static_cast<std::size_t>(v)];
        const auto& parents = dag.parents[static_cast<std::size_t>(v)];
        if (parents.empty()) {
            mech.kind = Mechanism::Kind::root;  // value is a standard normal draw
            mech.noise_scale = 1.0;
            continue;
        }
        const int p = static_cast<int>(parents.size());
        const double u = rng.uniform();
        mech.noise_scale = rng.uniform(config.noise_scale.lo, config.noise_scale.hi);
        if (u < config.mechanisms.linear) {
            mech.kind = Mechanism::Kind::linear;
            const double w_std = 1.0 / std::sqrt(static_cast<double>(p));
            for (int i = 0; i < p; ++i) mech.lin_w.push_back(rng.normal(0.0, w_std));
            mech.lin_b = rng.normal(0.0, 0.1);
        } else if (u < config.mechanisms.linear + config.mechanisms.mlp) {
            mech.kind = Mechanism::Kind::mlp;
            mech.mlp_hidden = config.mlp_hidden;
            const double w1_std = 1.0 / std::sqrt(static_cast<double>(p));
            const double w2_std = 1.0 / std::sqrt(static_cast<double>(config.mlp_hidden));
            mech.mlp_w1.resize(static_cast<std::size_t>(p * config.mlp_hidden));
            for (double& w : mech.mlp_w1) w = rng.normal(0.0, w1_std);
            mech.mlp_b1.resize(static_cast<std::size_t>(config.mlp_hidden));
            for (double& b : mech.mlp_b1) b = rng.normal(0.0, 0.5);
            mech.mlp_w2.resize(static_cast<std::size_t>(config.mlp_hidden));
            for (double& w : mech.mlp_w2) w = rng.normal(0.0, w2_std);
            mech.mlp_b2 = rng.normal(0.0, 0.1);
        } else {
            mech.kind = Mechanism::Kind::tree;
            grow_tree(mech.tree, 0, config.tree_max_depth, p, rng);
        }
    }
    return mechanisms;
}

namespace {

// Quantile thresholds that split `values` into `levels` roughly equal bins;
// returns the bin index per value. Deterministic under ties.
std::vector<int> quantile_bin(const std::vector<double>& values, int levels) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<int> bins(n, 0);
    for (std::size_t rank = 0; rank < n; ++rank) {
        const auto bin = static_cast<int>((rank * static_cast<std::size_t>(levels)) / n);
        bins[order[rank]] = std::min(bin, levels - 1);
    }
    // Equal values must land in the same bin: collapse ties to the first
    // occurrence's bin.
    for (std::size_t i = 1; i < n; ++i)
        if (values[order[i]] == values[order[i - 1]]) bins[order[i]] = bins[order[i - 1]];
    return bins;
}

}  // namespace

Episode sample_episode(const PriorConfig& config, Rng& rng) {
    config.validate();
    for (int attempt = 0; attempt < config.resample_retries; ++attempt) {
        const Dag dag = sample_dag(config, rng);
        const std::vector<Mechanism> mechanisms = sample_mechanisms(dag, config, rng);
        const auto n_rows = rng.uniform_int(config.n_rows.lo, config.n_rows.hi);
        const int n_classes =
            static_cast<int>(rng.uniform_int(config.num_classes.lo, config.num_classes.hi));

        // Ancestral sampling, node by node in topological order.
        std::vector<std::vector<double>> values(static_cast<std::size_t>(dag.n_nodes));
        for (int v = 0; v < dag.n_nodes; ++v) {
            auto& col = values[static_cast<std::size_t>(v)];
            col.resize(static_cast<std::size_t>(n_rows));
            const Mechanism& mech = mechanisms[static_cast<std::size_t>(v)];
            const auto& parents = dag.parents[static_cast<std::size_t>(v)];
            std::vector<double> parent_values(parents.size());
            for (std::int64_t r = 0; r < n_rows; ++r) {
                for (std::size_t pi = 0; pi < parents.size(); ++pi)
                    parent_values[pi] =
                        values[static_cast<std::size_t>(parents[pi])][static_cast<std::size_t>(r)];
                col[static_cast<std::size_t>(r)] =
                    mech.eval(parent_values) + mech.noise_scale * rng.normal();
            }
        }

        const std::vector<int> label_bins =
            quantile_bin(values[static_cast<std::size_t>(dag.label_node)], n_classes);

        // Assemble the observed table.
        const auto nf = static_cast<std::int64_t>(dag.feature_nodes.size());
        Table full;
        full.n_rows = n_rows;
        full.num_classes = n_classes;
        full.schema.resize(static_cast<std::size_t>(nf));
        full.cells.resize(static_cast<std::size_t>(n_rows * nf));
        for (std::int64_t c = 0; c < nf; ++c) {
            auto& schema = full.schema[static_cast<std::size_t>(c)];
            schema.name = "f" + std::to_string(c);
            const auto& col = values[static_cast<std::size_t>(dag.feature_nodes[static_cast<std::size_t>(c)])];
            if (rng.uniform() < config.categorical_feature_prob) {
                const int levels = static_cast<int>(rng.uniform_int(2, config.max_cat_levels));
                const std::vector<int> bins = quantile_bin(col, levels);
                schema.kind = ColKind::categorical;
                int max_bin = 0;
                for (int b : bins) max_bin = std::max(max_bin, b);
                for (int b = 0; b <= max_bin; ++b) schema.categories.push_back(std::to_string(b));
                for (std::int64_t r = 0; r < n_rows; ++r)
                    full.cell(r, c) = static_cast<double>(bins[static_cast<std::size_t>(r)]);
            } else {
                schema.kind = ColKind::numeric;
                for (std::int64_t r = 0; r < n_rows; ++r)
                    full.cell(r, c) = col[static_cast<std::size_t>(r)];
            }
        }
        full.labels.resize(static_cast<std::size_t>(n_rows));
        for (std::int64_t r = 0; r < n_rows; ++r)
            full.labels[static_cast<std::size_t>(r)] = label_bins[static_cast<std::size_t>(r)];

        // Random disjoint split.
        std::vector<std::int64_t> perm(static_cast<std::size_t>(n_rows));
        std::iota(perm.begin(), perm.end(), std::int64_t{0});
        for (std::int64_t i = n_rows - 1; i > 0; --i)
            std::swap(perm[static_cast<std::size_t>(i)],
                      perm[static_cast<std::size_t>(rng.uniform_int(0, i))]);
        const auto n_train = std::max<std::int64_t>(
            1, std::min<std::int64_t>(
                   n_rows - 1,
                   static_cast<std::int64_t>(std::floor(config.train_fraction *
                                                            static_cast<double>(n_rows) +
                                                        0.5))));
        const std::vector<std::int64_t> train_rows(perm.begin(), perm.begin() + n_train);
        const std::vector<std::int64_t> test_rows(perm.begin() + n_train, perm.end());

        Episode episode;
        episode.train = full.select_rows(train_rows);
        episode.test = full.select_rows(test_rows);
        episode.trace.edges = dag.edges;
        for (const auto& mech : mechanisms) episode.trace.kinds.push_back(mech.kind);
        episode.trace.train_rows = train_rows;
        episode.trace.test_rows = test_rows;

        // The train split must expose every class.
        std::vector<bool> seen(static_cast<std::size_t>(n_classes), false);
        for (int y : episode.train.labels) seen[static_cast<std::size_t>(y)] = true;
        if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) return episode;
    }
    throw DataError("sample_episode: exceeded resample retries without covering all classes");
}

Episode sample_episode_keyed(const PriorConfig& config, std::uint64_t key) {
    Rng rng(Rng::derive({config.seed, 0x45504953u /* "EPIS" */, key}));
    Episode episode = sample_episode(config, rng);
    episode.task_id = key;
    return episode;
}

PriorConfig desk_prior() {
    PriorConfig config;
    config.n_rows = {96, 160};
    config.n_features = {2, 8};
    config.num_classes = {2, 4};
    config.dag_density = 0.3;
    return config;
}

PriorConfig linear_scm_prior() {
    PriorConfig config = desk_prior();
    config.mechanisms = {1.0, 0.0, 0.0};
    config.num_classes = {2, 2};
    config.categorical_feature_prob = 0.1;
    config.noise_scale = {0.05, 0.2};
    return config;
}

}  // namespace taco
