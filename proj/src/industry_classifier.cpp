#include "esgqa/industry_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "esgqa/errors.hpp"
#include "esgqa/util.hpp"

namespace esgqa::cls {

void validate_labels(const LabelSet& labels, const std::set<std::string>& universe)
{
    if (labels.empty()) throw PreconditionError("label set is empty");
    if (labels.size() > kMaxLabels) throw PreconditionError("label set has more than 5 industries");
    if (universe.empty()) return;
    for (const auto& l : labels) {
        if (!universe.count(l)) throw UnknownIndustryId("label outside the corpus: " + l);
    }
}

// ---------------------------------------------------------------- LLM classifier

std::map<std::string, std::string> industry_descriptions(const std::vector<ingest::IndustryDoc>& corpus,
                                                         std::size_t max_chars)
{
    std::map<std::string, std::string> out;
    for (const auto& d : corpus)
        out[d.industry_id] = d.display_name() + ". " + ingest::industry_description(d, max_chars);
    return out;
}

std::string classifier_prompt(const std::map<std::string, std::string>& descriptions)
{
    std::string listing;
    for (const auto& [id, text] : descriptions) {
        if (!listing.empty()) listing += "\n";
        listing += id + ": " + text;
    }
    return "You are a sustainability reporting expert specializing in corporate sustainability reports using IFRS "
           "standards. Your task is to identify industries directly related to a given question, referring to these "
           "industry descriptions:\n\n" +
           listing +
           "\n\nGuidelines:\n"
           "1. Only return industries that are DIRECTLY and PRIMARILY relevant to the company's core business "
           "activities mentioned in the question.\n"
           "3. Be extremely precise: do not include industries that are only tangentially related or those that the "
           "company might interact with but are not part of its primary operations.\n"
           "4. Consider the context of corporate sustainability reporting when making your decision.\n"
           "5. If multiple industries are relevant, limit your selection to the 1-3 most applicable ones.\n"
           "6. Avoid including industries that might be part of the supply chain or waste management unless they are "
           "explicitly stated as a core part of the company's operations.\n"
           "GIVE at least 1 undustry and at most 3 industries. return the full code like "
           "b1-apparel-accessories-and-footwear.";
}

const json& classifier_schema()
{
    static const json s = {
        {"type", "object"},
        {"properties",
         {{"industries",
           {{"type", "array"},
            {"items", {{"type", "string"}}},
            {"minItems", 1},
            {"description", "industry codes, e.g. b1-apparel-accessories-and-footwear"}}}}},
        {"required", {"industries"}},
        {"additionalProperties", false}};
    return s;
}

LlmClassifier::LlmClassifier(const llm::Provider& provider, std::map<std::string, std::string> descriptions,
                             LlmClassifierConfig cfg)
    : provider_(provider), descriptions_(std::move(descriptions)), cfg_(std::move(cfg))
{
    if (descriptions_.empty()) throw PreconditionError("classifier needs industry descriptions");
    if (cfg_.max_labels < 1 || cfg_.max_labels > kMaxLabels) throw PreconditionError("max_labels must be 1..5");
}

namespace {

std::vector<std::string> reply_ids(const json& reply)
{
    std::vector<std::string> ids;
    for (const auto& v : reply.at("industries")) {
        auto id = to_lower(trim(v.get<std::string>()));
        if (!id.empty() && std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
    }
    return ids;
}

} // namespace

LabelSet LlmClassifier::classify(const std::string& query) const
{
    llm::ProviderRequest req;
    req.model_id = cfg_.model;
    req.temperature = cfg_.temperature;
    req.messages = {llm::Message::system(classifier_prompt(descriptions_)),
                    llm::Message::user("Question: " + query)};
    req.output_schema = llm::OutputSchema{"industry_classification", "Industries relevant to the question",
                                          classifier_schema()};

    auto unknown_of = [&](const std::vector<std::string>& ids) {
        std::vector<std::string> bad;
        for (const auto& id : ids) {
            if (!descriptions_.count(id)) bad.push_back(id);
        }
        return bad;
    };

    auto reply = provider_.complete_structured(req);
    auto ids = reply_ids(reply);
    auto unknown = unknown_of(ids);
    if (!unknown.empty()) {
        spdlog::warn("classifier returned unknown industries {}; re-prompting", join(unknown, ", "));
        req.messages.push_back(llm::Message::assistant(reply.dump()));
        req.messages.push_back(llm::Message::user("These codes are not in the industry list: " + join(unknown, ", ") +
                                                  ". Answer again using only codes from the list above."));
        reply = provider_.complete_structured(req);
        ids = reply_ids(reply);
        unknown = unknown_of(ids);
        if (!unknown.empty()) throw UnknownIndustryId("classifier returned unknown industries: " + join(unknown, ", "));
    }
    if (ids.empty()) throw SchemaViolation("classifier returned no industries");
    if (ids.size() > cfg_.max_labels) {
        spdlog::info("classifier returned {} industries; keeping the first {}", ids.size(), cfg_.max_labels);
        ids.resize(cfg_.max_labels);
    }
    return {ids.begin(), ids.end()};
}

// ---------------------------------------------------------------- MLP

namespace {

Eigen::MatrixXd relu(const Eigen::MatrixXd& z) { return z.cwiseMax(0.0); }

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z)
{
    return z.unaryExpr([](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

struct Pass {
    std::vector<Eigen::MatrixXd> z; // pre-activations per layer
    std::vector<Eigen::MatrixXd> a; // a[0] = input, a[i+1] = activation of layer i
};

Pass run(const std::vector<Eigen::MatrixXd>& w, const std::vector<Eigen::VectorXd>& b, const Eigen::MatrixXd& x)
{
    Pass p;
    p.a.push_back(x);
    for (std::size_t l = 0; l < w.size(); ++l) {
        Eigen::MatrixXd z = w[l] * p.a.back();
        z.colwise() += b[l];
        p.z.push_back(z);
        p.a.push_back(l + 1 == w.size() ? sigmoid(z) : relu(z));
    }
    return p;
}

} // namespace

MlpModel MlpModel::initialise(const std::vector<int>& dims, std::vector<std::string> labels, std::uint64_t seed)
{
    if (dims.size() < 2) throw PreconditionError("an MLP needs at least input and output sizes");
    for (int d : dims) {
        if (d < 1) throw PreconditionError("layer sizes must be positive");
    }
    if (static_cast<int>(labels.size()) != dims.back())
        throw DimensionMismatch("output size does not match the label count");
    MlpModel m;
    m.labels_ = std::move(labels);
    m.seed_ = seed;
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / dims[l]));
        Eigen::MatrixXd w(dims[l + 1], dims[l]);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
        m.w_.push_back(std::move(w));
        m.b_.push_back(Eigen::VectorXd::Zero(dims[l + 1]));
    }
    return m;
}

std::vector<int> MlpModel::dims() const
{
    std::vector<int> d;
    if (w_.empty()) return d;
    d.push_back(static_cast<int>(w_.front().cols()));
    for (const auto& w : w_) d.push_back(static_cast<int>(w.rows()));
    return d;
}

void MlpModel::set_threshold(double t)
{
    if (!(t > 0.0 && t < 1.0)) throw PreconditionError("threshold must lie in (0, 1)");
    threshold_ = t;
}

Eigen::MatrixXd MlpModel::forward(const Eigen::MatrixXd& x) const
{
    if (w_.empty()) throw PreconditionError("model is not initialised");
    if (x.rows() != w_.front().cols())
        throw DimensionMismatch("input has " + std::to_string(x.rows()) + " features, model expects " +
                                std::to_string(w_.front().cols()));
    return run(w_, b_, x).a.back();
}

Eigen::VectorXd MlpModel::probabilities(const Eigen::VectorXd& x) const { return forward(x).col(0); }

double MlpModel::loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const
{
    if (w_.empty()) throw PreconditionError("model is not initialised");
    if (x.rows() != w_.front().cols() || y.rows() != w_.back().rows() || x.cols() != y.cols())
        throw DimensionMismatch("loss inputs do not match the model");
    const auto p = run(w_, b_, x);
    const auto& z = p.z.back();
    // Stable BCE from logits: max(z,0) - z*y + log(1 + e^-|z|).
    double total = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        const double v = z.data()[i];
        total += std::max(v, 0.0) - v * y.data()[i] + std::log1p(std::exp(-std::abs(v)));
    }
    return total / static_cast<double>(z.size());
}

MlpGradients MlpModel::gradients(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const
{
    if (w_.empty()) throw PreconditionError("model is not initialised");
    if (x.rows() != w_.front().cols() || y.rows() != w_.back().rows() || x.cols() != y.cols())
        throw DimensionMismatch("gradient inputs do not match the model");
    const auto p = run(w_, b_, x);
    MlpGradients g;
    g.weights.resize(w_.size());
    g.biases.resize(w_.size());
    Eigen::MatrixXd delta = (p.a.back() - y) / static_cast<double>(y.size());
    for (std::size_t l = w_.size(); l-- > 0;) {
        g.weights[l] = delta * p.a[l].transpose();
        g.biases[l] = delta.rowwise().sum();
        if (l == 0) break;
        delta = (w_[l].transpose() * delta).cwiseProduct(
            p.z[l - 1].unaryExpr([](double v) { return v > 0 ? 1.0 : 0.0; }));
    }
    return g;
}

void MlpModel::save(const std::filesystem::path& path) const
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write model file " + path.string());
    const json header = {{"format", "esgqa-mlp"}, {"version", 1},       {"dims", dims()},
                         {"labels", labels_},     {"threshold", threshold_}, {"seed", seed_}};
    out << header.dump() << "\n";
    auto write = [&](const double* data, Eigen::Index n) {
        out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
    };
    for (std::size_t l = 0; l < w_.size(); ++l) {
        write(w_[l].data(), w_[l].size());
        write(b_[l].data(), b_[l].size());
    }
    if (!out) throw Error("failed writing model file " + path.string());
}

MlpModel MlpModel::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read model file " + path.string());
    std::string line;
    std::getline(in, line);
    const auto header = json::parse(line);
    if (header.value("format", "") != "esgqa-mlp") throw Error("not a model file: " + path.string());
    const auto d = header.at("dims").get<std::vector<int>>();
    auto m = initialise(d, header.at("labels").get<std::vector<std::string>>(), header.at("seed").get<std::uint64_t>());
    m.set_threshold(header.at("threshold").get<double>());
    auto read = [&](double* data, Eigen::Index n) {
        in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
        if (!in) throw Error("truncated model file " + path.string());
    };
    for (std::size_t l = 0; l < m.w_.size(); ++l) {
        read(m.w_[l].data(), m.w_[l].size());
        read(m.b_[l].data(), m.b_[l].size());
    }
    return m;
}

TrainResult mlp_train(const std::vector<Example>& examples, const MlpConfig& cfg, std::vector<std::string> labels)
{
    if (examples.empty()) throw PreconditionError("training needs at least one example");
    if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.learning_rate > 0))
        throw PreconditionError("invalid training configuration");
    const auto d_in = examples.front().x.size();
    if (d_in < 1) throw DimensionMismatch("examples have no features");
    if (labels.empty()) {
        std::set<std::string> all;
        for (const auto& e : examples) all.insert(e.labels.begin(), e.labels.end());
        labels.assign(all.begin(), all.end());
    }
    if (labels.empty()) throw PreconditionError("training examples carry no labels");
    std::map<std::string, int> slot;
    for (std::size_t i = 0; i < labels.size(); ++i) slot[labels[i]] = static_cast<int>(i);

    const auto n = static_cast<Eigen::Index>(examples.size());
    Eigen::MatrixXd x(d_in, n);
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto& e = examples[static_cast<std::size_t>(j)];
        if (e.x.size() != d_in) throw DimensionMismatch("examples have inconsistent dimensions");
        x.col(j) = e.x;
        for (const auto& l : e.labels) {
            auto it = slot.find(l);
            if (it == slot.end()) throw UnknownIndustryId("example label outside the label list: " + l);
            y(it->second, j) = 1.0;
        }
    }

    std::vector<int> dims = {static_cast<int>(d_in)};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(static_cast<int>(labels.size()));
    TrainResult result{MlpModel::initialise(dims, labels, cfg.seed), {}};
    auto& model = result.model;
    model.set_threshold(cfg.threshold);

    // Adam state.
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<Eigen::MatrixXd> mw, vw;
    std::vector<Eigen::VectorXd> mb, vb;
    for (std::size_t l = 0; l < model.weights().size(); ++l) {
        mw.push_back(Eigen::MatrixXd::Zero(model.weights()[l].rows(), model.weights()[l].cols()));
        vw.push_back(mw.back());
        mb.push_back(Eigen::VectorXd::Zero(model.biases()[l].size()));
        vb.push_back(mb.back());
    }
    std::mt19937_64 rng(cfg.seed ^ 0x5eedULL);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const auto m = static_cast<Eigen::Index>(end - start);
            Eigen::MatrixXd xb(d_in, m), yb(y.rows(), m);
            for (Eigen::Index k = 0; k < m; ++k) {
                xb.col(k) = x.col(order[start + static_cast<std::size_t>(k)]);
                yb.col(k) = y.col(order[start + static_cast<std::size_t>(k)]);
            }
            const auto g = model.gradients(xb, yb);
            ++step;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (std::size_t l = 0; l < g.weights.size(); ++l) {
                mw[l] = beta1 * mw[l] + (1 - beta1) * g.weights[l];
                vw[l] = beta2 * vw[l] + (1 - beta2) * g.weights[l].cwiseAbs2();
                model.weights()[l].array() -=
                    cfg.learning_rate * (mw[l].array() / c1) / ((vw[l].array() / c2).sqrt() + eps);
                mb[l] = beta1 * mb[l] + (1 - beta1) * g.biases[l];
                vb[l] = beta2 * vb[l] + (1 - beta2) * g.biases[l].cwiseAbs2();
                model.biases()[l].array() -=
                    cfg.learning_rate * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + eps);
            }
        }
        result.loss_trace.push_back(model.loss(x, y));
    }
    return result;
}

LabelSet mlp_predict(const MlpModel& model, const Eigen::VectorXd& x, double threshold)
{
    if (!(threshold > 0.0 && threshold < 1.0)) throw PreconditionError("threshold must lie in (0, 1)");
    const auto p = model.probabilities(x);
    LabelSet out;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p(i) >= threshold) out.insert(model.labels()[static_cast<std::size_t>(i)]);
    }
    if (out.empty()) {
        Eigen::Index best = 0;
        p.maxCoeff(&best);
        out.insert(model.labels()[static_cast<std::size_t>(best)]);
    }
    return out;
}

// ---------------------------------------------------------------- metrics

json ClassifierMetrics::to_json() const
{
    return {{"macro_f1", macro_f1}, {"precision", precision}, {"recall", recall}, {"hamming_loss", hamming_loss}};
}

ClassifierMetrics score(const std::vector<LabelSet>& predictions, const std::vector<LabelSet>& truths,
                        Averaging averaging, const std::set<std::string>& universe)
{
    if (predictions.size() != truths.size())
        throw LengthMismatch("predictions and truths differ in length (" + std::to_string(predictions.size()) +
                             " vs " + std::to_string(truths.size()) + ")");
    if (predictions.empty()) throw PreconditionError("nothing to score");
    std::set<std::string> labels = universe;
    if (labels.empty()) {
        for (const auto& s : predictions) labels.insert(s.begin(), s.end());
        for (const auto& s : truths) labels.insert(s.begin(), s.end());
    }
    if (labels.empty()) throw PreconditionError("no labels to score");

    struct Counts {
        std::size_t tp = 0, fp = 0, fn = 0;
    };
    std::map<std::string, Counts> per;
    for (const auto& l : labels) per[l];
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        for (const auto& l : predictions[i]) {
            if (!labels.count(l)) throw UnknownIndustryId("prediction outside the label universe: " + l);
            if (truths[i].count(l))
                ++per[l].tp;
            else
                ++per[l].fp;
        }
        for (const auto& l : truths[i]) {
            if (!labels.count(l)) throw UnknownIndustryId("truth outside the label universe: " + l);
            if (!predictions[i].count(l)) ++per[l].fn;
        }
    }

    ClassifierMetrics m;
    std::size_t tp = 0, fp = 0, fn = 0, scored = 0;
    double f1_sum = 0, p_sum = 0, r_sum = 0;
    for (const auto& [label, c] : per) {
        tp += c.tp;
        fp += c.fp;
        fn += c.fn;
        const bool support = c.tp + c.fn > 0;
        if (!support && c.fp == 0) continue;
        ++scored;
        f1_sum += 2.0 * c.tp / static_cast<double>(2 * c.tp + c.fp + c.fn);
        p_sum += c.tp + c.fp ? c.tp / static_cast<double>(c.tp + c.fp) : 0.0;
        r_sum += support ? c.tp / static_cast<double>(c.tp + c.fn) : 0.0;
    }
    m.macro_f1 = scored ? f1_sum / static_cast<double>(scored) : 0.0;
    if (averaging == Averaging::Micro) {
        m.precision = tp + fp ? tp / static_cast<double>(tp + fp) : 0.0;
        m.recall = tp + fn ? tp / static_cast<double>(tp + fn) : 0.0;
    } else {
        m.precision = scored ? p_sum / static_cast<double>(scored) : 0.0;
        m.recall = scored ? r_sum / static_cast<double>(scored) : 0.0;
    }
    m.hamming_loss = static_cast<double>(fp + fn) / static_cast<double>(predictions.size() * labels.size());
    return m;
}

} // namespace esgqa::cls
