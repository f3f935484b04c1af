"""
阈值标定：在训练图块上汇总直方图计算一次多阈值 Otsu，之后冻结使用。
"""
import logging
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from errors import DegenerateHistogramError
from patchio.patch import StainDomain
from .masks import CHANNEL_INDEX, DEFAULT_WORKING_INDEX, DOMAIN_KINDS, Polarity, ThresholdSet, split_channels
from .otsu import MAX_CLASSES_SPLIT, ChannelHistogram, multi_otsu

logger = logging.getLogger(__name__)

MaskRules = Dict[str, Tuple[str, Polarity]]


def mask_rules_from_config(config, domain: StainDomain) -> MaskRules:
    """
    读取 [maskextract] 中的 channel.<domain>.<kind> 与 polarity.<domain>.<kind>
    :param config: PipelineConfig
    :param domain: he 或 cd20
    :return: {kind: (channel, polarity)}
    """
    domain = StainDomain(domain).base
    return {
        kind: (config.channel_rule(domain.value, kind).upper(), Polarity(config.polarity(domain.value, kind)))
        for kind in DOMAIN_KINDS[domain]
    }


def pooled_histograms(images: Iterable[np.ndarray]) -> Dict[str, ChannelHistogram]:
    """所有图像按 R/G/B 分别汇总的直方图"""
    totals = {name: np.zeros(256, dtype=np.int64) for name in CHANNEL_INDEX}
    seen = 0
    for image in images:
        for name, channel in zip(CHANNEL_INDEX, split_channels(image)):
            totals[name] += ChannelHistogram.from_channel(channel).bins
        seen += 1
    if seen == 0:
        raise ValueError("标定至少需要一幅图像")
    return {name: ChannelHistogram(bins) for name, bins in totals.items()}


def thresholds_from_histograms(histograms: Dict[str, ChannelHistogram], domain: StainDomain, rules: MaskRules,
                               k: int = MAX_CLASSES_SPLIT,
                               working_index: int = DEFAULT_WORKING_INDEX) -> Dict[str, ThresholdSet]:
    cache: Dict[str, Tuple[int, ...]] = {}
    result = {}
    for kind, (channel, polarity) in rules.items():
        if channel not in cache:
            cache[channel] = multi_otsu(histograms[channel], k)
        result[kind] = ThresholdSet(domain=StainDomain(domain).base, channel=channel, thresholds=cache[channel],
                                    working_index=working_index, polarity=polarity)
    return result


def calibrate_thresholds(images: Iterable[np.ndarray], domain: StainDomain, rules: MaskRules,
                         k: int = MAX_CLASSES_SPLIT,
                         working_index: int = DEFAULT_WORKING_INDEX) -> Dict[str, ThresholdSet]:
    """
    汇总标定：所有图块的直方图相加后各通道求一次阈值
    :param images: 同一染色域的 RGB 图块
    :param domain: 染色域
    :param rules: {kind: (channel, polarity)}
    :param k: 阈值个数
    :param working_index: 工作阈值下标（默认第二高）
    :return: {kind: ThresholdSet}；直方图退化时抛 DegenerateHistogramError
    """
    histograms = pooled_histograms(images)
    result = thresholds_from_histograms(histograms, domain, rules, k, working_index)
    for kind, ts in result.items():
        logger.info("标定完成 domain=%s kind=%s channel=%s thresholds=%s working=%d",
                    ts.domain.value, kind, ts.channel, list(ts.thresholds), ts.working_threshold)
    return result


def calibrate_per_patch(patches: Iterable[Tuple[str, np.ndarray]], domain: StainDomain, rules: MaskRules,
                        k: int = MAX_CLASSES_SPLIT, working_index: int = DEFAULT_WORKING_INDEX
                        ) -> Iterator[Tuple[str, Dict[str, Optional[ThresholdSet]]]]:
    """
    逐图块标定。单个图块直方图退化时该种类记为 None 并告警，不中断
    :param patches: [(patch_id, image), …]
    """
    for patch_id, image in patches:
        histograms = pooled_histograms([image])
        result: Dict[str, Optional[ThresholdSet]] = {}
        for kind, rule in rules.items():
            try:
                result.update(thresholds_from_histograms(histograms, domain, {kind: rule}, k, working_index))
            except DegenerateHistogramError as e:
                logger.warning("图块 %s 的 %s 直方图退化: %s", patch_id, kind, e)
                result[kind] = None
        yield patch_id, result


def per_patch_records(results: Iterable[Tuple[str, Dict[str, Optional[ThresholdSet]]]]) -> List[dict]:
    """逐图块标定结果转为 JSON lines 记录"""
    return [
        {"patch_id": patch_id, "thresholds": {kind: ts.to_dict() if ts else None for kind, ts in sets.items()}}
        for patch_id, sets in results
    ]
