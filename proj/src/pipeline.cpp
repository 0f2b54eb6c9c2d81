// SPDX-License-Identifier: Apache-2.0
#include "signpipe/pipeline.hpp"

#include "signpipe/error.hpp"

namespace signpipe {

void PipelineResources::validate() const
{
    model.validate();
    nn::check_weights(weights, model);
    if (spec.feature_dim() != model.input_dim)
        throw ShapeError("selection yields " + std::to_string(spec.feature_dim()) +
                         " features but the model expects " + std::to_string(model.input_dim));
    if (labels.size() != 0 && labels.size() != model.num_classes)
        throw ValidationError("label map has " + std::to_string(labels.size()) + " glosses but the model has " +
                              std::to_string(model.num_classes) + " classes");
    templates.validate();
    if (!(words_per_minute > 0.0))
        throw ValidationError("speech rate must be positive");
}

nn::Prediction recognize(const PipelineResources& res, const SignSample& sample)
{
    const auto features = preprocess_pipeline(sample, res.spec, res.model.max_seq_len);
    return nn::predict(features, res.weights, res.model, res.labels);
}

net::Script to_wire(const ComposeResult& composed, const Timeline& timeline)
{
    net::Script s;
    s.tagged_text = composed.tagged_text;
    for (const auto& ev : timeline.events) {
        net::ScriptEvent e;
        if (const auto* sp = std::get_if<SpeechEvent>(&ev)) {
            e = {net::ScriptEvent::Kind::speech, sp->start_s, sp->duration_s, sp->text, {}};
        } else {
            const auto& g = std::get<GestureEvent>(ev);
            e = {net::ScriptEvent::Kind::gesture, g.start_s, g.duration_s, g.tag, g.body_parts};
        }
        s.events.push_back(std::move(e));
    }
    s.warnings = composed.warnings;
    for (const auto& w : timeline.warnings)
        s.warnings.push_back(w.message);
    return s;
}

TurnResponse respond(const PipelineResources& res, const SignSample& sample, LlmBackend& backend)
{
    const auto pred = recognize(res, sample);
    const RecognitionEvent event{pred.gloss, pred.confidence * 100.0};
    const auto composed = compose(event, res.gestures, backend, res.templates, res.max_retries);
    const auto timeline = schedule(composed.script, res.gestures, res.words_per_minute);
    return {net::Result{event.gloss, event.confidence_pct}, to_wire(composed, timeline)};
}

} // namespace signpipe
