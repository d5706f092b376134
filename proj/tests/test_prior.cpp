#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "taco/metrics.hpp"
#include "taco/preprocess.hpp"
#include "taco/prior.hpp"

using namespace taco;

namespace {

// Test-only oracle: a depth-limited CART over gini impurity, probability
// output from leaf class frequencies. Independent of everything the prior
// implements.
struct TinyTree {
    struct Node {
        int feature = -1;
        double threshold = 0;
        int left = -1, right = -1;
        std::vector<double> class_freq;
    };
    std::vector<Node> nodes;
    int n_classes = 0;

    static double gini(const std::vector<std::int64_t>& counts, std::int64_t total) {
        if (total == 0) return 0;
        double g = 1.0;
        for (std::int64_t c : counts) {
            const double p = static_cast<double>(c) / static_cast<double>(total);
            g -= p * p;
        }
        return g;
    }

    int build(const Table& t, const std::vector<std::int64_t>& rows, int depth) {
        Node node;
        std::vector<std::int64_t> counts(static_cast<std::size_t>(n_classes), 0);
        for (auto r : rows) ++counts[static_cast<std::size_t>(t.labels[static_cast<std::size_t>(r)])];
        node.class_freq.resize(static_cast<std::size_t>(n_classes));
        for (int c = 0; c < n_classes; ++c)
            node.class_freq[static_cast<std::size_t>(c)] =
                (static_cast<double>(counts[static_cast<std::size_t>(c)]) + 1.0) /
                (static_cast<double>(rows.size()) + n_classes);

        bool pure = false;
        for (std::int64_t c : counts) pure = pure || c == static_cast<std::int64_t>(rows.size());
        if (depth == 0 || rows.size() < 8 || pure) {
            nodes.push_back(node);
            return static_cast<int>(nodes.size()) - 1;
        }

        double best_gain = 1e-9;
        int best_f = -1;
        double best_thr = 0;
        const double parent = gini(counts, static_cast<std::int64_t>(rows.size()));
        for (std::int64_t f = 0; f < t.n_features(); ++f) {
            std::vector<double> values;
            for (auto r : rows) values.push_back(t.cell(r, f));
            std::sort(values.begin(), values.end());
            for (std::size_t q = 1; q < 4; ++q) {
                const double thr = values[values.size() * q / 4];
                std::vector<std::int64_t> lc(static_cast<std::size_t>(n_classes), 0),
                    rc(static_cast<std::size_t>(n_classes), 0);
                std::int64_t ln = 0, rn = 0;
                for (auto r : rows) {
                    if (t.cell(r, f) <= thr) {
                        ++lc[static_cast<std::size_t>(t.labels[static_cast<std::size_t>(r)])];
                        ++ln;
                    } else {
                        ++rc[static_cast<std::size_t>(t.labels[static_cast<std::size_t>(r)])];
                        ++rn;
                    }
                }
                if (ln == 0 || rn == 0) continue;
                const double child =
                    (static_cast<double>(ln) * gini(lc, ln) + static_cast<double>(rn) * gini(rc, rn)) /
                    static_cast<double>(rows.size());
                if (parent - child > best_gain) {
                    best_gain = parent - child;
                    best_f = static_cast<int>(f);
                    best_thr = thr;
                }
            }
        }
        if (best_f < 0) {
            nodes.push_back(node);
            return static_cast<int>(nodes.size()) - 1;
        }
        node.feature = best_f;
        node.threshold = best_thr;
        const int self = static_cast<int>(nodes.size());
        nodes.push_back(node);
        std::vector<std::int64_t> left, right;
        for (auto r : rows) (t.cell(r, best_f) <= best_thr ? left : right).push_back(r);
        nodes[static_cast<std::size_t>(self)].left = build(t, left, depth - 1);
        nodes[static_cast<std::size_t>(self)].right = build(t, right, depth - 1);
        return self;
    }

    void fit(const Table& t, int classes) {
        n_classes = classes;
        std::vector<std::int64_t> rows(static_cast<std::size_t>(t.n_rows));
        for (std::int64_t i = 0; i < t.n_rows; ++i) rows[static_cast<std::size_t>(i)] = i;
        build(t, rows, 3);
    }

    std::vector<double> predict_proba(const Table& t) const {
        std::vector<double> probs(static_cast<std::size_t>(t.n_rows * n_classes));
        for (std::int64_t r = 0; r < t.n_rows; ++r) {
            int node = 0;
            while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
                const auto& n = nodes[static_cast<std::size_t>(node)];
                node = t.cell(r, n.feature) <= n.threshold ? n.left : n.right;
            }
            for (int c = 0; c < n_classes; ++c)
                probs[static_cast<std::size_t>(r * n_classes + c)] =
                    nodes[static_cast<std::size_t>(node)].class_freq[static_cast<std::size_t>(c)];
        }
        return probs;
    }
};

}  // namespace

TEST_CASE("sampled dags are acyclic with a caused label") {
    PriorConfig config = desk_prior();
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(seed);
        const Dag dag = sample_dag(config, rng);
        CHECK(dag.is_acyclic());
        CHECK(dag.parents[static_cast<std::size_t>(dag.label_node)].size() >= 1);
        CHECK(dag.label_node == dag.n_nodes - 1);
        CHECK(static_cast<int>(dag.feature_nodes.size() + dag.latent_nodes.size()) ==
              dag.n_nodes - 1);
    }
}

TEST_CASE("density zero still forces a label parent") {
    PriorConfig config = desk_prior();
    config.dag_density = 0.0;
    Rng rng(3);
    const Dag dag = sample_dag(config, rng);
    CHECK(dag.parents[static_cast<std::size_t>(dag.label_node)].size() == 1);
    CHECK(dag.edges.size() == 1);
}

TEST_CASE("dag sampling is seed deterministic") {
    PriorConfig config = desk_prior();
    Rng a(77), b(77);
    CHECK(sample_dag(config, a).edges == sample_dag(config, b).edges);
}

TEST_CASE("mechanisms: roots are unit normals, trees respect the depth bound") {
    PriorConfig config = desk_prior();
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const Dag dag = sample_dag(config, rng);
        const auto mechanisms = sample_mechanisms(dag, config, rng);
        for (int v = 0; v < dag.n_nodes; ++v) {
            const auto& mech = mechanisms[static_cast<std::size_t>(v)];
            if (dag.parents[static_cast<std::size_t>(v)].empty()) {
                CHECK(mech.kind == Mechanism::Kind::root);
                CHECK(mech.noise_scale == 1.0);
            } else if (mech.kind == Mechanism::Kind::tree) {
                CHECK(mech.tree_leaf_count() <= 16);  // depth <= 4
                CHECK(mech.tree_leaf_count() >= 1);
            }
        }
    }
}

TEST_CASE("zero-weight linear mechanism is pure noise") {
    Mechanism mech;
    mech.kind = Mechanism::Kind::linear;
    mech.lin_w = {0.0, 0.0};
    mech.lin_b = 0.0;
    mech.noise_scale = 1.0;
    Rng rng(8);
    double sum_xy = 0, sum_x = 0, sum_y = 0, sum_xx = 0, sum_yy = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const double parent = rng.normal();
        const double out = mech.eval({parent, parent}) + mech.noise_scale * rng.normal();
        sum_x += parent;
        sum_y += out;
        sum_xy += parent * out;
        sum_xx += parent * parent;
        sum_yy += out * out;
    }
    const double cov = sum_xy / n - (sum_x / n) * (sum_y / n);
    const double vx = sum_xx / n - (sum_x / n) * (sum_x / n);
    const double vy = sum_yy / n - (sum_y / n) * (sum_y / n);
    CHECK(std::abs(cov / std::sqrt(vx * vy)) < 0.1);
}

TEST_CASE("episodes: schema, splits and class coverage") {
    PriorConfig config = desk_prior();
    config.seed = 42;
    for (std::uint64_t key = 0; key < 30; ++key) {
        const Episode ep = sample_episode_keyed(config, key);
        CHECK(ep.train.n_features() == ep.test.n_features());
        CHECK(ep.train.n_features() >= config.n_features.lo);
        CHECK(ep.train.n_features() <= config.n_features.hi);
        CHECK(ep.train.num_classes == ep.test.num_classes);
        CHECK(ep.train.n_rows + ep.test.n_rows >= config.n_rows.lo);
        CHECK(ep.train.n_rows + ep.test.n_rows <= config.n_rows.hi);

        // disjoint index sets
        std::set<std::int64_t> train_set(ep.trace.train_rows.begin(), ep.trace.train_rows.end());
        for (std::int64_t r : ep.trace.test_rows) CHECK(train_set.count(r) == 0);

        // every class present in the train split
        std::vector<bool> seen(static_cast<std::size_t>(ep.train.num_classes), false);
        for (int y : ep.train.labels) seen[static_cast<std::size_t>(y)] = true;
        for (bool s : seen) CHECK(s);
    }
}

TEST_CASE("episode sampling is byte deterministic in (config, seed)") {
    PriorConfig config = desk_prior();
    config.seed = 9;
    const Episode a = sample_episode_keyed(config, 4);
    const Episode b = sample_episode_keyed(config, 4);
    CHECK(a.train.fingerprint() == b.train.fingerprint());
    CHECK(a.test.fingerprint() == b.test.fingerprint());
    const Episode c = sample_episode_keyed(config, 5);
    CHECK(a.train.fingerprint() != c.train.fingerprint());
}

TEST_CASE("binary quantile binning keeps the train marginal near one half") {
    PriorConfig config = desk_prior();
    config.num_classes = {2, 2};
    config.seed = 17;
    double positive = 0, total = 0;
    for (std::uint64_t key = 0; key < 1000; ++key) {
        const Episode ep = sample_episode_keyed(config, key);
        for (int y : ep.train.labels) {
            positive += y;
            total += 1;
        }
    }
    const double marginal = positive / total;
    CHECK(marginal > 0.45);
    CHECK(marginal < 0.55);
}

TEST_CASE("learnability smoke: a small tree beats chance on most episodes") {
    PriorConfig config = desk_prior();
    config.seed = 23;
    int learnable = 0, total = 0;
    for (std::uint64_t key = 0; key < 100; ++key) {
        const Episode ep = sample_episode_keyed(config, key);
        auto [train_pp, stats] = preprocess(ep.train);
        const Table test_pp = preprocess(ep.test, stats);
        std::vector<bool> seen(static_cast<std::size_t>(ep.test.num_classes), false);
        int present = 0;
        for (int y : ep.test.labels) seen[static_cast<std::size_t>(y)] = true;
        for (bool s : seen) present += s;
        if (present < 2) continue;

        TinyTree tree;
        tree.fit(train_pp, ep.train.num_classes);
        const std::vector<double> probs = tree.predict_proba(test_pp);
        double auc;
        if (ep.train.num_classes == 2) {
            std::vector<double> scores(static_cast<std::size_t>(test_pp.n_rows));
            for (std::int64_t r = 0; r < test_pp.n_rows; ++r)
                scores[static_cast<std::size_t>(r)] = probs[static_cast<std::size_t>(r * 2 + 1)];
            auc = roc_auc_binary(scores, ep.test.labels);
        } else {
            auc = roc_auc_ovo(probs, ep.train.num_classes, ep.test.labels);
        }
        learnable += auc > 0.55 ? 1 : 0;
        ++total;
    }
    CHECK(static_cast<double>(learnable) / static_cast<double>(total) >= 0.7);
}
