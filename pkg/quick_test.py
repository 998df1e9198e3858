#!/usr/bin/env python3
"""
Script de prueba rápida para verificar que gap_green funciona
"""

import importlib
import os

import numpy as np
from dotenv import load_dotenv


def test_environment():
    """Verifica variables de entorno (opcionales)"""
    print("🔍 Verificando variables de entorno...")

    load_dotenv()

    for var in ("GAPGREEN_OUTPUT_DIR", "GAPGREEN_THREADS"):
        value = os.getenv(var)
        if value:
            print(f"   ✅ {var}: {value}")
        else:
            print(f"   ℹ️  {var} sin definir (se usa el valor por defecto)")

    threads = os.getenv("GAPGREEN_THREADS")
    if threads is not None and not threads.isdigit():
        print(f"   ❌ GAPGREEN_THREADS debe ser un entero: {threads!r}")
        return False
    return True


def test_imports():
    """Verifica que las dependencias numéricas estén instaladas"""
    print("\n📦 Verificando dependencias...")

    missing = []
    for module in ("numpy", "scipy", "pandas", "click", "dotenv"):
        try:
            importlib.import_module(module)
            print(f"   ✅ {module}")
        except ImportError:
            missing.append(module)

    if missing:
        print(f"   ❌ Faltan: {', '.join(missing)}")
        print("   💡 Ejecuta: pip install -r requirements.txt")
        return False
    return True


def test_support_point():
    """Punto soporte del operador libre en d=2: h(s) = √|λ| en toda dirección"""
    print("\n🧭 Verificando punto soporte del operador libre...")

    from src.complex_dispersion import QuadraticDispersion
    from src.level_set_geometry import support_point

    try:
        dispersion = QuadraticDispersion(2.0 * np.eye(2))
        sp = support_point(dispersion, None, -0.25, [0.6, 0.8])
        if abs(sp.h - 0.5) > 1e-12:
            print(f"   ❌ h = {sp.h:.15g}, se esperaba 0.5")
            return False
        print(f"   ✅ h = {sp.h:.15g} en {sp.iterations} iteraciones")
        return True
    except Exception as e:
        print(f"   ❌ Error en punto soporte: {e}")
        return False


def test_free_closure():
    """Oráculo vs K₀ y término principal para -Δ en d=2, λ = -1/4, r = 10"""
    print("\n🔬 Verificando cierre con la función de Green libre...")

    from src.asymptotics import LeadingTermInputs, leading_term
    from src.complex_dispersion import QuadraticDispersion
    from src.green_oracle import free_reference, green_bz_integral
    from src.level_set_geometry import support_point
    from src.operator_model import free_operator

    try:
        lam, r = -0.25, 10.0
        x, y = np.array([r, 0.0]), np.zeros(2)
        reference = free_reference(lam, r, 2)

        sample = green_bz_integral(free_operator(2), lam, x, y, cutoff=1)
        oracle_error = abs(sample.value - reference) / reference
        print(f"   {'✅' if oracle_error < 1e-6 else '❌'} Oráculo: error relativo {oracle_error:.2e} (M={sample.grid})")

        dispersion = QuadraticDispersion(2.0 * np.eye(2))
        sp = support_point(dispersion, None, lam, [1.0, 0.0])
        lead = leading_term(LeadingTermInputs(None, sp, dispersion.bloch_pair(sp.beta_s), x, y))
        lead_error = abs(lead - reference) / reference
        print(f"   {'✅' if lead_error < 0.05 else '❌'} Término principal: error relativo {lead_error:.2e}")
        return oracle_error < 1e-6 and lead_error < 0.05
    except Exception as e:
        print(f"   ❌ Error en el cierre: {e}")
        return False


def main():
    """Función principal"""
    print("🧪 Prueba rápida de gap_green")
    print("=" * 50)

    tests = [
        ("Variables de entorno", test_environment),
        ("Dependencias", test_imports),
        ("Punto soporte", test_support_point),
        ("Cierre libre", test_free_closure),
    ]

    passed = 0
    total = len(tests)

    for test_name, test_func in tests:
        try:
            if test_func():
                passed += 1
        except Exception as e:
            print(f"   ❌ Error en {test_name}: {e}")

    print("\n" + "=" * 50)
    print(f"📊 Resultados: {passed}/{total} pruebas pasadas")

    if passed == total:
        print("🎉 ¡gap_green listo para usar!")
        print("\n🚀 Próximos pasos:")
        print("1. Ejecuta: python app.py init")
        print("2. Ejecuta: python app.py edge-check -c configs/mathieu_2d.json")
        print("3. Ejecuta: python app.py validate -c configs/free_2d.json")
    else:
        print("⚠️  Algunas pruebas fallaron")
        print("\n🔧 Soluciones comunes:")
        print("- Ejecuta: ./setup_local.sh")
        print("- Revisa GAPGREEN_THREADS en .env")
    return passed == total


if __name__ == "__main__":
    main()
