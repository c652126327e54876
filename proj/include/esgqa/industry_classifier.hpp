#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "esgqa/ingest.hpp"
#include "esgqa/llm_provider.hpp"

namespace esgqa::cls {

using json = nlohmann::json;
using LabelSet = std::set<std::string>;

inline constexpr std::size_t kMaxLabels = 5;

/// Throws PreconditionError when empty or oversized, UnknownIndustryId when
/// an id is outside `universe` (an empty universe accepts every id).
void validate_labels(const LabelSet& labels, const std::set<std::string>& universe = {});

// ---------------------------------------------------------------- LLM classifier

/// industry_id -> short description, one per corpus document.
std::map<std::string, std::string> industry_descriptions(const std::vector<ingest::IndustryDoc>& corpus,
                                                         std::size_t max_chars = 800);

std::string classifier_prompt(const std::map<std::string, std::string>& descriptions);
const json& classifier_schema();

struct LlmClassifierConfig {
    std::string model = "gpt-4o";
    double temperature = 0.0;
    std::size_t max_labels = 3;
};

class LlmClassifier {
public:
    LlmClassifier(const llm::Provider& provider, std::map<std::string, std::string> descriptions,
                  LlmClassifierConfig cfg = {});

    /// 1..max_labels known ids. Unknown ids get one repair re-prompt, then
    /// UnknownIndustryId; surplus ids are dropped in reply order.
    LabelSet classify(const std::string& query) const;

    const std::map<std::string, std::string>& descriptions() const { return descriptions_; }

private:
    const llm::Provider& provider_;
    std::map<std::string, std::string> descriptions_;
    LlmClassifierConfig cfg_;
};

// ---------------------------------------------------------------- MLP

struct MlpConfig {
    std::vector<int> hidden = {128, 64};
    int epochs = 200;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    double threshold = 0.5;
};

struct MlpGradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
};

/// ReLU hidden layers, logistic output, one unit per label.
class MlpModel {
public:
    MlpModel() = default;
    /// He-initialised weights, zero biases.
    static MlpModel initialise(const std::vector<int>& dims, std::vector<std::string> labels, std::uint64_t seed);

    std::vector<int> dims() const;
    const std::vector<std::string>& labels() const { return labels_; }
    double threshold() const { return threshold_; }
    void set_threshold(double t);
    std::uint64_t seed() const { return seed_; }

    /// Column-per-example inputs; returns column-per-example probabilities.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
    Eigen::VectorXd probabilities(const Eigen::VectorXd& x) const;

    /// Mean binary cross-entropy over examples x labels.
    double loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const;
    MlpGradients gradients(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const;

    std::vector<Eigen::MatrixXd>& weights() { return w_; }
    std::vector<Eigen::VectorXd>& biases() { return b_; }
    const std::vector<Eigen::MatrixXd>& weights() const { return w_; }
    const std::vector<Eigen::VectorXd>& biases() const { return b_; }

    /// One JSON header line (dims, labels, threshold, seed) followed by the
    /// raw little-endian doubles of each layer's weights then biases.
    void save(const std::filesystem::path& path) const;
    static MlpModel load(const std::filesystem::path& path);

private:
    std::vector<Eigen::MatrixXd> w_;
    std::vector<Eigen::VectorXd> b_;
    std::vector<std::string> labels_;
    double threshold_ = 0.5;
    std::uint64_t seed_ = 0;
};

struct Example {
    Eigen::VectorXd x;
    LabelSet labels;
};

struct TrainResult {
    MlpModel model;
    std::vector<double> loss_trace; // full-data loss after each epoch
};

/// Mini-batch Adam on mean BCE. `labels` fixes the output order; empty
/// means the sorted union of the examples' labels. Throws DimensionMismatch.
TrainResult mlp_train(const std::vector<Example>& examples, const MlpConfig& cfg,
                      std::vector<std::string> labels = {});

/// Labels at or above `threshold`; the argmax label when none are.
LabelSet mlp_predict(const MlpModel& model, const Eigen::VectorXd& x, double threshold);
inline LabelSet mlp_predict(const MlpModel& model, const Eigen::VectorXd& x)
{
    return mlp_predict(model, x, model.threshold());
}

// ---------------------------------------------------------------- metrics

enum class Averaging { Micro, Macro };

struct ClassifierMetrics {
    double macro_f1 = 0;
    double precision = 0;
    double recall = 0;
    double hamming_loss = 0;

    json to_json() const;
};

/// Macro F1 over labels with support, plus unsupported labels that were
/// predicted (scored 0). `universe` defaults to the union of all labels
/// seen; it sets L for the Hamming loss. Throws LengthMismatch.
ClassifierMetrics score(const std::vector<LabelSet>& predictions, const std::vector<LabelSet>& truths,
                        Averaging averaging = Averaging::Micro, const std::set<std::string>& universe = {});

} // namespace esgqa::cls
