#include "spikescore/trajectory.hpp"

#include <cmath>
#include <numeric>

#include "spikescore/error.hpp"

namespace spikescore {
namespace {

void require_finite(std::span<const double> scores) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) {
            fail(ErrorKind::InvalidArgument,
                 "non-finite score at turn " + std::to_string(i + 1));
        }
    }
}

void require_second_differences(std::span<const double> scores) {
    if (scores.size() < 3) {
        fail(ErrorKind::InvalidArgument, "sequence too short for second differences (length " +
                                             std::to_string(scores.size()) + ", need >= 3)");
    }
    require_finite(scores);
}

}  // namespace

void ScoreSequence::validate() const {
    if (scores.empty()) fail(ErrorKind::InvalidArgument, "empty score sequence for item " + item_id);
    require_finite(scores);
}

std::vector<double> abs_second_differences(std::span<const double> scores) {
    require_second_differences(scores);
    std::vector<double> out;
    out.reserve(scores.size() - 2);
    for (std::size_t k = 1; k + 1 < scores.size(); ++k) {
        out.push_back(std::fabs(scores[k + 1] - 2.0 * scores[k] + scores[k - 1]));
    }
    return out;
}

double spike_score(std::span<const double> scores) {
    require_second_differences(scores);
    double best = 0.0;
    for (std::size_t k = 1; k + 1 < scores.size(); ++k) {
        const double d = std::fabs(scores[k + 1] - 2.0 * scores[k] + scores[k - 1]);
        if (d > best) best = d;
    }
    return best;
}

double spike_score(const ScoreSequence& seq) { return spike_score(seq.scores); }

std::size_t peak_turn(std::span<const double> scores) {
    require_second_differences(scores);
    std::size_t best_k = 1;
    double best = -1.0;
    for (std::size_t k = 1; k + 1 < scores.size(); ++k) {
        const double d = std::fabs(scores[k + 1] - 2.0 * scores[k] + scores[k - 1]);
        if (d > best) {
            best = d;
            best_k = k;
        }
    }
    return best_k + 1;
}

std::size_t peak_turn(const ScoreSequence& seq) { return peak_turn(seq.scores); }

double coefficient_of_variation(std::span<const double> scores) {
    if (scores.size() < 2) {
        fail(ErrorKind::InvalidArgument, "variance undefined for fewer than 2 scores");
    }
    require_finite(scores);
    const double n = static_cast<double>(scores.size());
    const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
    if (!(mean > 0.0)) fail(ErrorKind::Degenerate, "CV undefined for non-positive mean");
    double ss = 0.0;
    for (double s : scores) ss += (s - mean) * (s - mean);
    return std::sqrt(ss / (n - 1.0)) / mean;
}

double coefficient_of_variation(const ScoreSequence& seq) {
    return coefficient_of_variation(seq.scores);
}

ScoreSequence truncate_sequence(const ScoreSequence& seq, std::size_t k_prime) {
    if (k_prime < 1 || k_prime > seq.scores.size()) {
        fail(ErrorKind::OutOfRange, "truncation length " + std::to_string(k_prime) +
                                        " outside [1, " + std::to_string(seq.scores.size()) + "]");
    }
    ScoreSequence out{seq.item_id, seq.backbone_id, {}};
    out.scores.assign(seq.scores.begin(), seq.scores.begin() + static_cast<std::ptrdiff_t>(k_prime));
    return out;
}

}  // namespace spikescore
