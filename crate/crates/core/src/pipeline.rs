//! End-to-end wiring of the four stages for one record.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::captioner::{CaptionError, CaptionGenerator, GeneratedCaption, WeightConfig};
use crate::corpus::RegionRecord;
use crate::dialogue::{ContextGenerator, DialogueError, FusedContext, StageTarget};
use crate::gateway::{BackendLimits, Gateway, GatewayBuilder, MockBackend, MOCK_BACKEND_ID};
use crate::imaging::{ImageSource, ImagingError, DEFAULT_JPEG_QUALITY};
use crate::translation::{ContextTranslator, RoutingTable, TranslatedContext, TranslationError, TranslatorKind};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("image preparation failed: {0}")]
    Imaging(#[from] ImagingError),
    #[error("context generation failed: {0}")]
    Dialogue(#[from] DialogueError),
    #[error("translation failed: {0}")]
    Translation(#[from] TranslationError),
    #[error("captioning failed: {0}")]
    Caption(#[from] CaptionError),
}

impl PipelineError {
    /// Configuration problems abort a batch; everything else is per-record.
    pub fn is_config(&self) -> bool {
        match self {
            PipelineError::Dialogue(DialogueError::Gateway(e)) => e.is_config(),
            PipelineError::Translation(TranslationError::Config(_)) => true,
            PipelineError::Translation(TranslationError::Segment { source, .. }) => source.is_config(),
            PipelineError::Caption(CaptionError::Gateway(e)) => e.is_config(),
            PipelineError::Caption(CaptionError::InvalidWeights { .. }) => true,
            _ => false,
        }
    }
}

/// Which backend and model serve each stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAssignments {
    pub context_a: StageTarget,
    pub context_b: StageTarget,
    pub fusion: StageTarget,
    pub mt: StageTarget,
    pub llm_translate: StageTarget,
    pub caption: StageTarget,
}

impl Default for StageAssignments {
    fn default() -> Self {
        StageAssignments {
            context_a: StageTarget::new("gpt-4o", "gpt-4o-2024-08-06"),
            context_b: StageTarget::new("claude", "claude-3-5-sonnet-20240620"),
            fusion: StageTarget::new("gpt-4o", "gpt-4o-2024-08-06"),
            mt: StageTarget::new("indictrans2", "indictrans2-en-indic-1B"),
            llm_translate: StageTarget::new("gpt-4o", "gpt-4o-2024-08-06"),
            caption: StageTarget::new("gpt-4o", "gpt-4o-2024-08-06"),
        }
    }
}

impl StageAssignments {
    /// Every stage on the mock backend; model ids stay distinct so the two
    /// conversation producers give different answers.
    pub fn offline() -> Self {
        let t = |model: &str| StageTarget::new(MOCK_BACKEND_ID, model);
        StageAssignments {
            context_a: t("mock-context-a"),
            context_b: t("mock-context-b"),
            fusion: t("mock-fusion"),
            mt: t("mock-mt"),
            llm_translate: t("mock-llm"),
            caption: t("mock-caption"),
        }
    }

    pub fn all(&self) -> [(&'static str, &StageTarget); 6] {
        [
            ("context_a", &self.context_a),
            ("context_b", &self.context_b),
            ("fusion", &self.fusion),
            ("mt", &self.mt),
            ("llm_translate", &self.llm_translate),
            ("caption", &self.caption),
        ]
    }

    pub fn routing_table(&self) -> RoutingTable {
        RoutingTable::new(self.mt.clone(), self.llm_translate.clone())
    }

    pub fn describe(&self) -> String {
        self.all()
            .iter()
            .map(|(stage, t)| format!("{stage}={}/{}", t.backend_id, t.model_id))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Gateway builder with the mock backend registered under [`MOCK_BACKEND_ID`].
pub fn with_mock(builder: GatewayBuilder, seed: u64, limits: BackendLimits) -> GatewayBuilder {
    builder.backend(MOCK_BACKEND_ID, Arc::new(MockBackend::new(seed)), limits)
}

/// Weight-independent artifacts for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Upstream {
    pub fused: FusedContext,
    /// Its provenance covers context, fusion and translation calls.
    pub translated: TranslatedContext,
}

pub struct Pipeline {
    context: ContextGenerator,
    translator: ContextTranslator,
    captioner: CaptionGenerator,
    images: ImageSource,
    jpeg_quality: u8,
}

impl Pipeline {
    pub fn new(gateway: Arc<Gateway>, stages: &StageAssignments, images: ImageSource) -> Self {
        Pipeline {
            context: ContextGenerator::new(
                gateway.clone(),
                [stages.context_a.clone(), stages.context_b.clone()],
                stages.fusion.clone(),
            ),
            translator: ContextTranslator::new(gateway.clone(), stages.routing_table()),
            captioner: CaptionGenerator::new(gateway, stages.caption.clone()),
            images,
            jpeg_quality: DEFAULT_JPEG_QUALITY,
        }
    }

    pub fn translator_kind(&self, record: &RegionRecord) -> TranslatorKind {
        self.translator.routes().route(record.language).translator
    }

    pub fn context(&self, record: &RegionRecord) -> Result<FusedContext, PipelineError> {
        let crop = self.images.prepare(record, self.jpeg_quality)?;
        Ok(self
            .context
            .generate(record, crop.as_ref().map(|c| c.base64.as_str()))?)
    }

    pub fn translate(&self, record: &RegionRecord, fused: &FusedContext) -> Result<TranslatedContext, PipelineError> {
        Ok(self
            .translator
            .translate(&fused.conversation, record.language)?
            .with_upstream(&fused.provenance))
    }

    pub fn upstream(&self, record: &RegionRecord) -> Result<Upstream, PipelineError> {
        let fused = self.context(record)?;
        let translated = self.translate(record, &fused)?;
        Ok(Upstream { fused, translated })
    }

    pub fn caption(
        &self,
        record: &RegionRecord,
        upstream: &Upstream,
        weights: WeightConfig,
    ) -> Result<GeneratedCaption, PipelineError> {
        Ok(self.captioner.generate(record, &upstream.translated, weights)?)
    }
}
