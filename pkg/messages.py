# Шаблоны сообщений для команд swipe.py

SYNTH_DONE_MESSAGE = """
Синтетический корпус готов: {docs} документов, {labels} меток
Корпус: {corpus_path}
Карта ключевых сегментов: {keymap_path} ({pairs} положительных пар)
"""

TRAIN_DONE_MESSAGE = """
Обучение завершено: {epochs} эпох, {steps} шагов
Итоговая потеря: {final_loss:.4f}
Лучшая точность на dev: {best_dev}
Контрольная точка: {checkpoint}
"""

SEEDS_DONE_MESSAGE = """
Обучение с {count} начальными значениями: {seeds}
Лучшая точность на dev: {mean:.4f} ± {std:.4f}
"""

EVAL_MESSAGE = """
Выборка {split}: точность {accuracy:.4f}, micro F1 {micro_f1:.4f}, macro F1 {macro_f1:.4f}
"""

SEGMENTS_MESSAGE = """Разметка сегментов: micro F1 {micro_f1:.4f}, macro F1 {macro_f1:.4f}
Восстановление ключевых сегментов (top-1): {recovery:.4f}
"""

SUFFICIENCY_HEADER = f"{'длина':^8} | {'SWIPE':^8} | {'random':^8} | {'full text':^9}"

SUFFICIENCY_ROW = "{segment_len:^8} | {swipe:^8.4f} | {random:^8.4f} | {full_text:^9.4f}"

SCALE_HEADER = f"{'сегментов':^10} | {'медиана, мс':^12} | {'p10, мс':^10} | {'p90, мс':^10}"

SCALE_ROW = "{n_segments:^10} | {median_ms:^12.3f} | {p10_ms:^10.3f} | {p90_ms:^10.3f}"

SWEEP_MESSAGE = "Оптимальная длина сегмента (97% лучшей точности): {length} токенов"

CONVERGE_MESSAGE = """
max впереди sum после первой эпохи: {leads} из {seeds}
Разница итоговой точности (max - sum): {final_gap:+.4f}
"""

RUNS_EMPTY_MESSAGE = "В базе данных нет запусков обучения."


def format_best_dev(best_dev) -> str:
    return "нет выборки dev" if best_dev is None else f"{best_dev:.4f}"
