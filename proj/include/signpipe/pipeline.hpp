// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "signpipe/dialogue.hpp"
#include "signpipe/gesture.hpp"
#include "signpipe/landmark.hpp"
#include "signpipe/model.hpp"
#include "signpipe/preprocess.hpp"
#include "signpipe/protocol.hpp"

namespace signpipe {

/// Everything one recognition-and-response turn needs. Immutable once built.
struct PipelineResources {
    nn::ModelConfig model;
    nn::WeightStore weights;
    LabelMap labels;
    SelectionSpec spec = SelectionSpec::defaults();
    GestureDb gestures;
    PromptTemplate templates;
    double words_per_minute = kDefaultWordsPerMinute;
    std::size_t max_retries = 2;

    /// Throws ShapeError or ValidationError when the parts do not fit together.
    void validate() const;
};

nn::Prediction recognize(const PipelineResources& res, const SignSample& sample);

net::Script to_wire(const ComposeResult& composed, const Timeline& timeline);

struct TurnResponse {
    net::Result result;
    net::Script script;
};

/// preprocess -> predict -> compose -> schedule.
TurnResponse respond(const PipelineResources& res, const SignSample& sample, LlmBackend& backend);

} // namespace signpipe
