#include "spikescore/prompts.hpp"

#include <string>

#include "spikescore/error.hpp"
#include "spikescore/rng.hpp"

namespace spikescore {
namespace {

using enum PromptType;

constexpr std::array<PromptCard, 40> kLibrary{{
    {Encouraging, 1, "Great! Continue."},
    {Encouraging, 2, "Excellent! Please continue with more details."},
    {Encouraging, 3, "That's a good start. Now dive deeper into the specifics. What else can you add?"},
    {Encouraging, 4, "Wonderful analysis so far. Please expand with concrete examples or evidence."},
    {Encouraging, 5, "Your reasoning is strong. Push further by exploring nuances, edge cases, and broader implications."},

    {Analytical, 1, "Let's think about this carefully. What are the key pieces?"},
    {Analytical, 2, "Now analyze this systematically. Break it down further."},
    {Analytical, 3, "Examine each component more closely. What principles are at work here?"},
    {Analytical, 4, "Dissect the problem methodically. Identify variables, interactions, and governing rules."},
    {Analytical, 5, "Apply a rigorous framework. Consider causality, dependencies, and plausible edge cases."},

    {Stepwise, 1, "Good. What's the next step?"},
    {Stepwise, 2, "Continue with step-by-step reasoning."},
    {Stepwise, 3, "Proceed to the next logical step. What comes after what you just described?"},
    {Stepwise, 4, "Maintain a systematic flow. Continue the subsequent steps with the same level of detail."},
    {Stepwise, 5, "Advance step by step, ensuring each transition is justified and clearly linked to the prior step."},

    {Exploratory, 1, "What else might be relevant?"},
    {Exploratory, 2, "Interesting. What other angles should we consider?"},
    {Exploratory, 3, "Explore alternative perspectives or unconventional approaches to this problem."},
    {Exploratory, 4, "Think beyond the obvious. What hidden connections or non-intuitive insights might exist?"},
    {Exploratory, 5, "Challenge the initial assumptions. Propose alternative frameworks or paradigms we could apply."},

    {Technical, 1, "Provide basic technical details."},
    {Technical, 2, "Now provide the technical specifications."},
    {Technical, 3, "Include specific parameters, formulas, or implementation details."},
    {Technical, 4, "Provide precise measurements, calculations, and specifications. Be as quantitative as possible."},
    {Technical, 5, "Cover advanced aspects such as proofs, complexity analysis, or architecture-level design choices."},

    {Critical, 1, "Is there any flaw in this reasoning?"},
    {Critical, 2, "What are the potential flaws in this reasoning?"},
    {Critical, 3, "Play devil's advocate. What would a skeptic say?"},
    {Critical, 4, "List assumptions, possible failure modes, and counterarguments. Where could this break?"},
    {Critical, 5, "Perform a rigorous critique. Identify fallacies, biases, unstated premises, and edge cases."},

    {Creative, 1, "Offer a simple alternative idea."},
    {Creative, 2, "Be more creative with your approach."},
    {Creative, 3, "Think outside the box. What innovative or unconventional solutions can you propose?"},
    {Creative, 4, "Approach this from a different angle. Use analogy, metaphor, or synthesis."},
    {Creative, 5, "Push the boundaries. Combine disparate concepts or invent a new framework while staying coherent."},

    {Reflective, 1, "Reflect on what you have said so far."},
    {Reflective, 2, "Take a moment to reflect. How does everything connect?"},
    {Reflective, 3, "Pause and examine the reasoning journey. What key insights have emerged?"},
    {Reflective, 4, "Step back and reflect deeply. What would you reconsider or emphasize differently?"},
    {Reflective, 5, "Synthesize a high-level takeaway and state what you would revise in your previous answer."},
}};

constexpr std::array<std::string_view, kPromptTypeCount> kTypeNames{
    "Encouraging", "Analytical", "Stepwise", "Exploratory",
    "Technical",   "Critical",   "Creative", "Reflective",
};

// Stream tag separating prompt selection from every other consumer of a seed.
constexpr std::uint64_t kPromptStream = 0x70726f6d7074ULL;

}  // namespace

std::string_view prompt_type_name(PromptType type) noexcept {
    return kTypeNames[static_cast<std::size_t>(type)];
}

std::optional<PromptType> parse_prompt_type(std::string_view name) noexcept {
    for (std::size_t i = 0; i < kTypeNames.size(); ++i) {
        if (kTypeNames[i] == name) return static_cast<PromptType>(i);
    }
    return std::nullopt;
}

std::span<const PromptCard> prompt_library() noexcept { return kLibrary; }

const PromptCard& prompt_card(PromptType type, int strength) {
    if (strength < kMinStrength || strength > kMaxStrength) {
        fail(ErrorKind::OutOfRange, "prompt strength " + std::to_string(strength) + " outside [1, 5]");
    }
    return kLibrary[static_cast<std::size_t>(type) * 5 + static_cast<std::size_t>(strength - 1)];
}

int scheduled_strength(int turn_k, int turn_budget) {
    if (turn_budget < 2 || turn_k < 2 || turn_k > turn_budget) {
        fail(ErrorKind::OutOfRange, "turn " + std::to_string(turn_k) + " outside [2, " +
                                        std::to_string(turn_budget) + "]");
    }
    if (turn_budget == 2) return kMinStrength;
    // 1 + round(4 (k - 2) / (K - 2)), evaluated in integers.
    const int num = 8 * (turn_k - 2) + (turn_budget - 2);
    const int den = 2 * (turn_budget - 2);
    return kMinStrength + num / den;
}

const PromptCard& schedule_prompt(int turn_k, int turn_budget, std::uint64_t seed) {
    const int strength = scheduled_strength(turn_k, turn_budget);
    CounterRng rng(derive_key(derive_key(seed, kPromptStream), static_cast<std::uint64_t>(turn_k)));
    const auto type = static_cast<PromptType>(rng.below(kPromptTypeCount));
    return prompt_card(type, strength);
}

}  // namespace spikescore
