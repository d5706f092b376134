#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taco/rng.hpp"
#include "taco/table.hpp"

namespace taco {

struct IntRange {
    std::int64_t lo = 0;
    std::int64_t hi = 0;  // inclusive
    bool valid() const { return lo <= hi; }
};

struct RealRange {
    double lo = 0.0;
    double hi = 0.0;
    bool valid() const { return lo <= hi; }
};

// Relative weights of the causal mechanism kinds; must sum to 1.
struct MechanismMix {
    double linear = 0.4;
    double mlp = 0.3;
    double tree = 0.3;
};

struct PriorConfig {
    IntRange n_rows{96, 160};       // total rows per episode (train + test)
    IntRange n_features{2, 100};
    double dag_density = 0.25;      // edge probability between ordered node pairs
    MechanismMix mechanisms;
    RealRange noise_scale{0.05, 0.3};
    IntRange num_classes{2, 10};
    IntRange latent_confounders{0, 3};  // unobserved nodes per graph
    double train_fraction = 0.75;
    double categorical_feature_prob = 0.2;
    int max_cat_levels = 8;         // categorical features bin to at most this many levels
    int mlp_hidden = 8;
    int tree_max_depth = 4;
    int resample_retries = 16;
    std::uint64_t seed = 0;

    void validate() const;
};

// Directed acyclic graph over feature nodes, latent confounders, and one
// label node. Nodes are indexed in topological order; the label is last.
struct Dag {
    int n_nodes = 0;
    int label_node = 0;
    std::vector<int> feature_nodes;  // observed, in column order
    std::vector<int> latent_nodes;   // unobserved
    std::vector<std::pair<int, int>> edges;     // (parent, child), parent < child
    std::vector<std::vector<int>> parents;      // per node

    bool is_acyclic() const;  // checks the topological-order invariant
};

struct Mechanism {
    enum class Kind { root, linear, mlp, tree };

    struct TreeNode {
        int split_parent = -1;  // index into the node's parent list; -1 = leaf
        double threshold = 0.0;
        int left = -1, right = -1;
        double leaf_value = 0.0;
    };

    Kind kind = Kind::root;
    double noise_scale = 1.0;
    // linear
    std::vector<double> lin_w;
    double lin_b = 0.0;
    // mlp: tanh two-layer with random weights
    std::vector<double> mlp_w1, mlp_b1, mlp_w2;
    double mlp_b2 = 0.0;
    int mlp_hidden = 0;
    // tree: axis-aligned splits over parent values
    std::vector<TreeNode> tree;

    // Deterministic part, before noise.
    double eval(const std::vector<double>& parent_values) const;
    int tree_leaf_count() const;
};

struct GeneratorTrace {
    std::vector<std::pair<int, int>> edges;
    std::vector<Mechanism::Kind> kinds;
    std::vector<std::int64_t> train_rows, test_rows;  // indices into the sampled block
};

struct Episode {
    Table train;
    Table test;
    std::uint64_t task_id = 0;
    GeneratorTrace trace;
};

Dag sample_dag(const PriorConfig& config, Rng& rng);
std::vector<Mechanism> sample_mechanisms(const Dag& dag, const PriorConfig& config, Rng& rng);

// Ancestral sampling, quantile-binned label, random disjoint train/test
// split, and a random subset of features marked categorical. Degenerate draws
// (train split missing a class) are resampled up to `resample_retries` times.
Episode sample_episode(const PriorConfig& config, Rng& rng);

// Episode fully determined by (config, key): episode i of a run uses key i.
Episode sample_episode_keyed(const PriorConfig& config, std::uint64_t key);

// Presets: the desk-scale meta-training prior (linear+mlp+tree mechanisms)
// and the all-linear evaluation family.
PriorConfig desk_prior();
PriorConfig linear_scm_prior();

}  // namespace taco
