#include "tdm/prompts.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "tdm/rng.hpp"

namespace tdm {

namespace {
constexpr int kEmbeddingRows = 4096;

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Row `index` of the conceptual seeded embedding table.
Tensor embedding_row(std::uint64_t seed, std::uint64_t index, int d) {
    Rng rng(mix_seed(seed, index));
    Tensor row({d});
    rng.fill_normal(row);
    return row;
}
}  // namespace

const char* task_name(Task t) {
    switch (t) {
        case Task::Dehaze: return "dehaze";
        case Task::Derain: return "derain";
        case Task::Denoise: return "denoise";
        case Task::Mp4: return "mp4";
        case Task::Sr4: return "sr4";
    }
    throw std::invalid_argument("unknown task");
}

Task task_from_name(const std::string& name) {
    for (Task t : {Task::Dehaze, Task::Derain, Task::Denoise, Task::Mp4, Task::Sr4})
        if (name == task_name(t)) return t;
    throw std::invalid_argument("unknown task name: " + name);
}

std::string canonical_text(Task t) {
    switch (t) {
        case Task::Denoise: return "remove the noise";
        case Task::Derain: return "remove the rain";
        case Task::Dehaze: return "remove the haze";
        case Task::Mp4: return "remove the compression artifacts";
        case Task::Sr4: return "increase the resolution";
    }
    throw std::invalid_argument("unknown task");
}

std::vector<std::pair<Task, std::string>> task_catalog() {
    std::vector<std::pair<Task, std::string>> cat;
    for (Task t : {Task::Denoise, Task::Derain, Task::Dehaze, Task::Mp4, Task::Sr4})
        cat.emplace_back(t, canonical_text(t));
    return cat;
}

TaskPrompt TaskPrompt::neutral(int d_prompt) {
    TaskPrompt p;
    p.text = "";
    p.embedding = Tensor({d_prompt});
    return p;
}

TaskPrompt embed_task(const std::string& text, int d_prompt, std::uint64_t seed) {
    if (d_prompt < 1) throw std::invalid_argument("embed_task: d_prompt must be >= 1");
    std::istringstream iss(text);
    std::string token;
    Tensor sum({d_prompt});
    int count = 0;
    while (iss >> token) {
        sum += embedding_row(seed, fnv1a(token) % kEmbeddingRows, d_prompt);
        ++count;
    }
    if (count == 0) throw std::invalid_argument("embed_task: empty prompt text");

    sum *= 1.0 / count;
    const double nrm = norm2(sum);
    if (nrm < 1e-12) throw std::runtime_error("embed_task: degenerate embedding");
    sum *= 1.0 / nrm;

    TaskPrompt p;
    p.text = text;
    p.embedding = std::move(sum);
    for (const auto& [task, canonical] : task_catalog())
        if (canonical == text) p.task = task;
    return p;
}

}  // namespace tdm
