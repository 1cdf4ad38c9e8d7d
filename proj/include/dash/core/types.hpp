#pragma once

#include "dash/core/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dash {

using Json = nlohmann::json;
using Vector = std::vector<double>;

// Enum <-> string tables. Every enum that reaches disk goes through these so
// that record files stay language neutral.
namespace detail {

template <class E, std::size_t N>
using EnumNames = std::array<std::pair<E, std::string_view>, N>;

template <class E, std::size_t N>
std::string_view enum_to_string(const EnumNames<E, N>& names, E value) {
    for (const auto& [e, s] : names)
        if (e == value) return s;
    throw Error("unknown enum value");
}

template <class E, std::size_t N>
E enum_from_string(const EnumNames<E, N>& names, std::string_view text, std::string_view what) {
    for (const auto& [e, s] : names)
        if (s == text) return e;
    throw Error("invalid " + std::string(what) + ": '" + std::string(text) + "'");
}

} // namespace detail

#define DASH_ENUM_STRINGS(Enum, ...)                                                     \
    inline constexpr auto Enum##_names = std::to_array<std::pair<Enum, std::string_view>>({__VA_ARGS__}); \
    inline std::string_view to_string(Enum v) { return detail::enum_to_string(Enum##_names, v); } \
    inline Enum parse_##Enum(std::string_view s) { return detail::enum_from_string(Enum##_names, s, #Enum); } \
    inline void to_json(Json& j, Enum v) { j = std::string(to_string(v)); }              \
    inline void from_json(const Json& j, Enum& v) { v = parse_##Enum(j.get<std::string>()); }

enum class DatasetTag { imagenet, coco, objects365, openimages };
DASH_ENUM_STRINGS(DatasetTag,
                  {DatasetTag::imagenet, "imagenet"},
                  {DatasetTag::coco, "coco"},
                  {DatasetTag::objects365, "objects365"},
                  {DatasetTag::openimages, "openimages"})

enum class FrequencySplit { common, q10, median, rare };
DASH_ENUM_STRINGS(FrequencySplit,
                  {FrequencySplit::common, "common"},
                  {FrequencySplit::q10, "q10"},
                  {FrequencySplit::median, "median"},
                  {FrequencySplit::rare, "rare"})

enum class QueryKind { text, image };
DASH_ENUM_STRINGS(QueryKind,
                  {QueryKind::text, "text"},
                  {QueryKind::image, "image"})

enum class QueryOrigin { llm, optimized };
DASH_ENUM_STRINGS(QueryOrigin,
                  {QueryOrigin::llm, "llm"},
                  {QueryOrigin::optimized, "optimized"})

enum class Answer { yes, no, invalid };
DASH_ENUM_STRINGS(Answer,
                  {Answer::yes, "yes"},
                  {Answer::no, "no"},
                  {Answer::invalid, "invalid"})

enum class Stage { exploration, exploitation, generated, ingest };
DASH_ENUM_STRINGS(Stage,
                  {Stage::exploration, "exploration"},
                  {Stage::exploitation, "exploitation"},
                  {Stage::generated, "generated"},
                  {Stage::ingest, "ingest"})

#undef DASH_ENUM_STRINGS

struct ObjectSpec {
    std::string name;
    DatasetTag dataset = DatasetTag::coco;
    std::optional<FrequencySplit> split;

    void validate() const {
        if (name.empty()) throw Error("object name must be non-empty");
        if (split && dataset != DatasetTag::openimages)
            throw Error("frequency split '" + std::string(to_string(*split)) + "' on non-openimages object '" + name + "'");
    }

    friend bool operator==(const ObjectSpec&, const ObjectSpec&) = default;
};

struct Query {
    std::string id;
    ObjectSpec object;
    QueryKind kind = QueryKind::text;
    std::string payload;  // prompt text, or content hash of the image query
    Vector embedding;
    QueryOrigin origin = QueryOrigin::llm;
    std::optional<std::string> init_prompt_id;
    bool leaks_name = false;
};

struct Evaluation {
    std::string model_id;
    std::string template_id;
    std::string prompt;  // full prompt text sent to the model
    std::optional<std::string> reply;
    std::optional<Answer> answer;  // absent when the VLM was not consulted
    std::optional<double> p_yes;   // renormalized over {yes, no}
    std::optional<double> p_yes_raw;
    std::optional<std::string> detector_id;
    std::optional<double> p_det;
};

/// Where a record came from: the stage tag plus the query or image it was
/// retrieved for. `ingest` records carry an external marker as parent.
struct Lineage {
    Stage stage = Stage::exploration;
    std::string parent_id;

    friend bool operator==(const Lineage&, const Lineage&) = default;
};

struct ImageRecord {
    std::string id;
    std::string object;
    std::string uri;
    std::string content_hash;
    Vector embedding;
    Vector perceptual_embedding;
    Lineage lineage;
    std::vector<Evaluation> evaluations;
    std::optional<double> retrieval_similarity;
};

struct Cluster {
    std::string id;
    std::string object;
    std::vector<std::string> members;  // sorted ImageRecord ids
    std::vector<std::string> seeds;    // sorted exploration success ids

    std::size_t size() const noexcept { return members.size(); }
};

// JSON mapping. Optional members are omitted when empty.
namespace detail {

template <class T>
void put_opt(Json& j, const char* key, const std::optional<T>& v) {
    if (v) j[key] = *v;
}

template <class T>
void get_opt(const Json& j, const char* key, std::optional<T>& v) {
    if (auto it = j.find(key); it != j.end() && !it->is_null())
        v = it->template get<T>();
    else
        v.reset();
}

} // namespace detail

inline void to_json(Json& j, const ObjectSpec& o) {
    j = Json{{"name", o.name}, {"dataset", o.dataset}};
    detail::put_opt(j, "split", o.split);
}

inline void from_json(const Json& j, ObjectSpec& o) {
    j.at("name").get_to(o.name);
    o.dataset = j.value("dataset", DatasetTag::coco);
    detail::get_opt(j, "split", o.split);
    o.validate();
}

inline void to_json(Json& j, const Query& q) {
    j = Json{{"id", q.id},           {"object", q.object},         {"kind", q.kind},
             {"payload", q.payload}, {"embedding", q.embedding},   {"origin", q.origin},
             {"leaks_name", q.leaks_name}};
    detail::put_opt(j, "init_prompt_id", q.init_prompt_id);
}

inline void from_json(const Json& j, Query& q) {
    j.at("id").get_to(q.id);
    j.at("object").get_to(q.object);
    j.at("kind").get_to(q.kind);
    j.at("payload").get_to(q.payload);
    j.at("embedding").get_to(q.embedding);
    j.at("origin").get_to(q.origin);
    q.leaks_name = j.value("leaks_name", false);
    detail::get_opt(j, "init_prompt_id", q.init_prompt_id);
}

inline void to_json(Json& j, const Evaluation& e) {
    j = Json{{"model_id", e.model_id}, {"template_id", e.template_id}, {"prompt", e.prompt}};
    detail::put_opt(j, "reply", e.reply);
    detail::put_opt(j, "answer", e.answer);
    detail::put_opt(j, "p_yes", e.p_yes);
    detail::put_opt(j, "p_yes_raw", e.p_yes_raw);
    detail::put_opt(j, "detector_id", e.detector_id);
    detail::put_opt(j, "p_det", e.p_det);
}

inline void from_json(const Json& j, Evaluation& e) {
    j.at("model_id").get_to(e.model_id);
    e.template_id = j.value("template_id", std::string{});
    e.prompt = j.value("prompt", std::string{});
    detail::get_opt(j, "reply", e.reply);
    detail::get_opt(j, "answer", e.answer);
    detail::get_opt(j, "p_yes", e.p_yes);
    detail::get_opt(j, "p_yes_raw", e.p_yes_raw);
    detail::get_opt(j, "detector_id", e.detector_id);
    detail::get_opt(j, "p_det", e.p_det);
}

inline void to_json(Json& j, const Lineage& l) { j = Json{{"stage", l.stage}, {"parent", l.parent_id}}; }

inline void from_json(const Json& j, Lineage& l) {
    j.at("stage").get_to(l.stage);
    j.at("parent").get_to(l.parent_id);
}

inline void to_json(Json& j, const ImageRecord& r) {
    j = Json{{"id", r.id},
             {"object", r.object},
             {"uri", r.uri},
             {"content_hash", r.content_hash},
             {"embedding", r.embedding},
             {"perceptual_embedding", r.perceptual_embedding},
             {"lineage", r.lineage},
             {"evaluations", r.evaluations}};
    detail::put_opt(j, "retrieval_similarity", r.retrieval_similarity);
}

inline void from_json(const Json& j, ImageRecord& r) {
    j.at("id").get_to(r.id);
    r.object = j.value("object", std::string{});
    r.uri = j.value("uri", std::string{});
    j.at("content_hash").get_to(r.content_hash);
    r.embedding = j.value("embedding", Vector{});
    r.perceptual_embedding = j.value("perceptual_embedding", Vector{});
    j.at("lineage").get_to(r.lineage);
    r.evaluations = j.value("evaluations", std::vector<Evaluation>{});
    detail::get_opt(j, "retrieval_similarity", r.retrieval_similarity);
}

inline void to_json(Json& j, const Cluster& c) {
    j = Json{{"id", c.id}, {"object", c.object}, {"size", c.size()}, {"members", c.members}, {"seeds", c.seeds}};
}

inline void from_json(const Json& j, Cluster& c) {
    j.at("id").get_to(c.id);
    j.at("object").get_to(c.object);
    j.at("members").get_to(c.members);
    c.seeds = j.value("seeds", std::vector<std::string>{});
}

/// Latest evaluation by `model_id` on this record, if any.
inline const Evaluation* find_evaluation(const ImageRecord& r, std::string_view model_id) {
    for (auto it = r.evaluations.rbegin(); it != r.evaluations.rend(); ++it)
        if (it->model_id == model_id) return &*it;
    return nullptr;
}

} // namespace dash
