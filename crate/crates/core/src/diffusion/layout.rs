use std::ops::Range;

use crate::error::{Error, Result};

/// Which part of the sequence a position belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    /// Visual token in frame `n` (0-based).
    Visual(usize),
    Prompt,
    /// Response token in block `b` (0-based).
    Response(usize),
}

/// Partition of the token axis: frames of visual tokens, then the prompt,
/// then the response split into decoding blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLayout {
    frame_spans: Vec<Range<usize>>,
    prompt_span: Range<usize>,
    response_blocks: Vec<Range<usize>>,
    position_ids: Vec<usize>,
    mask_token_id: usize,
}

impl SequenceLayout {
    /// Contiguous layout with identity position ids.
    pub fn new(
        frames: usize,
        patches_per_frame: usize,
        prompt_length: usize,
        generation_length: usize,
        block_length: usize,
        mask_token_id: usize,
    ) -> Result<Self> {
        if frames == 0 || patches_per_frame == 0 {
            return Err(Error::Config(
                "layout needs at least one frame of at least one patch".into(),
            ));
        }
        if generation_length == 0 || block_length == 0 {
            return Err(Error::Config(
                "generation_length and block_length must be positive".into(),
            ));
        }
        let frame_spans = (0..frames)
            .map(|n| n * patches_per_frame..(n + 1) * patches_per_frame)
            .collect();
        let visual = frames * patches_per_frame;
        let prompt_span = visual..visual + prompt_length;
        let start = prompt_span.end;
        let response_blocks = (0..generation_length)
            .step_by(block_length)
            .map(|b| start + b..start + (b + block_length).min(generation_length))
            .collect();
        let seq_len = start + generation_length;
        Self::from_parts(
            frame_spans,
            prompt_span,
            response_blocks,
            (0..seq_len).collect(),
            mask_token_id,
        )
    }

    pub fn from_parts(
        frame_spans: Vec<Range<usize>>,
        prompt_span: Range<usize>,
        response_blocks: Vec<Range<usize>>,
        position_ids: Vec<usize>,
        mask_token_id: usize,
    ) -> Result<Self> {
        let bad = |m: &str| Err(Error::Config(format!("layout: {m}")));
        let Some(first) = frame_spans.first() else {
            return bad("no frames");
        };
        if first.start != 0 {
            return bad("visual segment must start at 0");
        }
        let width = first.len();
        if width == 0 {
            return bad("empty frame");
        }
        let mut at = 0;
        for f in &frame_spans {
            if f.start != at || f.len() != width {
                return bad("frames must be contiguous and of equal length");
            }
            at = f.end;
        }
        if prompt_span.start != at || prompt_span.end < prompt_span.start {
            return bad("prompt must follow the visual segment");
        }
        at = prompt_span.end;
        if response_blocks.is_empty() {
            return bad("no response blocks");
        }
        let block_len = response_blocks[0].len();
        for (i, b) in response_blocks.iter().enumerate() {
            let last = i + 1 == response_blocks.len();
            if b.start != at || b.is_empty() || (!last && b.len() != block_len) || b.len() > block_len
            {
                return bad("response blocks must be contiguous, non-empty and equal except the last");
            }
            at = b.end;
        }
        if position_ids.len() != at {
            return bad("one position id per token required");
        }
        Ok(Self {
            frame_spans,
            prompt_span,
            response_blocks,
            position_ids,
            mask_token_id,
        })
    }

    /// Same layout with different position ids (e.g. after relocation).
    pub fn with_position_ids(&self, position_ids: Vec<usize>) -> Result<Self> {
        Self::from_parts(
            self.frame_spans.clone(),
            self.prompt_span.clone(),
            self.response_blocks.clone(),
            position_ids,
            self.mask_token_id,
        )
    }

    pub fn seq_len(&self) -> usize {
        self.position_ids.len()
    }

    pub fn frame_spans(&self) -> &[Range<usize>] {
        &self.frame_spans
    }

    pub fn num_frames(&self) -> usize {
        self.frame_spans.len()
    }

    pub fn patches_per_frame(&self) -> usize {
        self.frame_spans[0].len()
    }

    pub fn visual_span(&self) -> Range<usize> {
        0..self.prompt_span.start
    }

    pub fn visual_len(&self) -> usize {
        self.prompt_span.start
    }

    pub fn prompt_span(&self) -> Range<usize> {
        self.prompt_span.clone()
    }

    pub fn response_span(&self) -> Range<usize> {
        self.prompt_span.end..self.seq_len()
    }

    pub fn response_len(&self) -> usize {
        self.seq_len() - self.prompt_span.end
    }

    pub fn response_blocks(&self) -> &[Range<usize>] {
        &self.response_blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.response_blocks.len()
    }

    pub fn position_ids(&self) -> &[usize] {
        &self.position_ids
    }

    pub fn mask_token_id(&self) -> usize {
        self.mask_token_id
    }

    pub fn segment(&self, index: usize) -> Segment {
        if index < self.visual_len() {
            Segment::Visual(index / self.patches_per_frame())
        } else if self.prompt_span.contains(&index) {
            Segment::Prompt
        } else {
            let off = index - self.prompt_span.end;
            Segment::Response(off / self.response_blocks[0].len())
        }
    }

    /// Text positions outside the active block: the prompt and every other
    /// response block (decoded or still masked).
    pub fn text_context(&self, active_block: usize) -> Vec<usize> {
        let active = &self.response_blocks[active_block];
        (self.prompt_span.start..self.seq_len())
            .filter(|i| !active.contains(i))
            .collect()
    }
}
