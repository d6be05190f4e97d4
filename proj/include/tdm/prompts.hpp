#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tdm/tensor.hpp"

namespace tdm {

enum class Task { Dehaze, Derain, Denoise, Mp4, Sr4 };

const char* task_name(Task t);
Task task_from_name(const std::string& name);

// Canonical task string plus its embedding vector. The neutral prompt (used
// by the no-guidance ablation row) carries an all-zero embedding.
struct TaskPrompt {
    std::string text;
    Tensor embedding;  // unit L2 norm, except neutral
    std::optional<Task> task;

    static TaskPrompt neutral(int d_prompt);
};

inline constexpr int kDefaultPromptDim = 32;

// Whitespace-tokenize, hash each token to a row of a seeded embedding table,
// mean-pool, L2-normalize.
TaskPrompt embed_task(const std::string& text, int d_prompt, std::uint64_t seed);

// The five canonical (task, prompt text) pairs.
std::vector<std::pair<Task, std::string>> task_catalog();

std::string canonical_text(Task t);

}  // namespace tdm
